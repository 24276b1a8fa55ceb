#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "rsdpt/rng.hpp"
#include "rsdpt/tape.hpp"
#include "rsdpt/tensor.hpp"

namespace rsdpt {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
MatMap<T> mat(Tensor<T>& t) {
  return MatMap<T>(t.v.data(), t.rows, t.cols);
}
template <typename T>
ConstMatMap<T> cmat(const Tensor<T>& t) {
  return ConstMatMap<T>(t.v.data(), t.rows, t.cols);
}
template <typename T>
MatMap<T> gmat(Tensor<T>& t) {
  return MatMap<T>(t.g.data(), t.rows, t.cols);
}

namespace detail {

template <typename T>
TensorPtr<T> fresh(Tape<T>* tape, int rows, int cols) {
  auto out = make_tensor<T>(rows, cols);
  if (tape != nullptr) {
    out->needs_grad = true;
    out->ensure_grad();
  }
  return out;
}

template <typename T>
void check_shape(const TensorPtr<T>& t, int rows, int cols, const char* op) {
  if (t->rows != rows || t->cols != cols)
    throw data_error(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// c = a . b
template <typename T>
TensorPtr<T> matmul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->cols != b->rows) throw data_error("matmul: inner dimensions differ");
  auto out = detail::fresh(tape, a->rows, b->cols);
  mat(*out).noalias() = cmat(*a) * cmat(*b);
  if (tape)
    tape->record([a, b, out] {
      if (a->needs_grad) {
        a->ensure_grad();
        gmat(*a).noalias() += gmat(*out) * cmat(*b).transpose();
      }
      if (b->needs_grad) {
        b->ensure_grad();
        gmat(*b).noalias() += cmat(*a).transpose() * gmat(*out);
      }
    });
  return out;
}

// c = alpha * a . b^T   (b given row-major as [n x k])
template <typename T>
TensorPtr<T> matmul_nt(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b, T alpha = T(1)) {
  if (a->cols != b->cols) throw data_error("matmul_nt: inner dimensions differ");
  auto out = detail::fresh(tape, a->rows, b->rows);
  mat(*out).noalias() = (cmat(*a) * cmat(*b).transpose()) * alpha;
  if (tape)
    tape->record([a, b, out, alpha] {
      if (a->needs_grad) {
        a->ensure_grad();
        gmat(*a).noalias() += (gmat(*out) * cmat(*b)) * alpha;
      }
      if (b->needs_grad) {
        b->ensure_grad();
        gmat(*b).noalias() += (gmat(*out).transpose() * cmat(*a)) * alpha;
      }
    });
  return out;
}

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::check_shape(b, a->rows, a->cols, "add");
  auto out = detail::fresh(tape, a->rows, a->cols);
  mat(*out) = cmat(*a) + cmat(*b);
  if (tape)
    tape->record([a, b, out] {
      if (a->needs_grad) {
        a->ensure_grad();
        gmat(*a) += gmat(*out);
      }
      if (b->needs_grad) {
        b->ensure_grad();
        gmat(*b) += gmat(*out);
      }
    });
  return out;
}

// x[m x n] + row[1 x n] broadcast over rows
template <typename T>
TensorPtr<T> add_row(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& row) {
  detail::check_shape(row, 1, x->cols, "add_row");
  auto out = detail::fresh(tape, x->rows, x->cols);
  mat(*out) = cmat(*x).rowwise() + cmat(*row).row(0);
  if (tape)
    tape->record([x, row, out] {
      if (x->needs_grad) {
        x->ensure_grad();
        gmat(*x) += gmat(*out);
      }
      if (row->needs_grad) {
        row->ensure_grad();
        gmat(*row).row(0) += gmat(*out).colwise().sum();
      }
    });
  return out;
}

template <typename T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& x, T c) {
  auto out = detail::fresh(tape, x->rows, x->cols);
  mat(*out) = cmat(*x) * c;
  if (tape)
    tape->record([x, out, c] {
      if (x->needs_grad) {
        x->ensure_grad();
        gmat(*x) += gmat(*out) * c;
      }
    });
  return out;
}

template <typename T>
TensorPtr<T> gelu(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = detail::fresh(tape, x->rows, x->cols);
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x->v[i];
    out->v[i] = v * T(0.5) * (T(1) + std::erf(v * T(M_SQRT1_2)));
  }
  if (tape)
    tape->record([x, out, n] {
      if (!x->needs_grad) return;
      x->ensure_grad();
      const T inv_sqrt_2pi = T(0.3989422804014326779);
      for (std::size_t i = 0; i < n; ++i) {
        const T v = x->v[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(M_SQRT1_2)));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        x->g[i] += out->g[i] * (cdf + v * pdf);
      }
    });
  return out;
}

template <typename T>
TensorPtr<T> tanh_op(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = detail::fresh(tape, x->rows, x->cols);
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i) out->v[i] = std::tanh(x->v[i]);
  if (tape)
    tape->record([x, out, n] {
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        x->g[i] += out->g[i] * (T(1) - out->v[i] * out->v[i]);
    });
  return out;
}

// Row-wise layer norm with learned scale/shift; population variance.
template <typename T>
TensorPtr<T> layer_norm(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, T eps) {
  detail::check_shape(gamma, 1, x->cols, "layer_norm");
  detail::check_shape(beta, 1, x->cols, "layer_norm");
  const int m = x->rows, n = x->cols;
  auto out = detail::fresh(tape, m, n);
  auto xhat = std::make_shared<std::vector<T>>(x->size());
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (int r = 0; r < m; ++r) {
    const T* xv = x->v.data() + static_cast<std::size_t>(r) * n;
    T mean = 0;
    for (int c = 0; c < n; ++c) mean += xv[c];
    mean /= T(n);
    T var = 0;
    for (int c = 0; c < n; ++c) var += (xv[c] - mean) * (xv[c] - mean);
    var /= T(n);
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    T* xh = xhat->data() + static_cast<std::size_t>(r) * n;
    T* ov = out->v.data() + static_cast<std::size_t>(r) * n;
    for (int c = 0; c < n; ++c) {
      xh[c] = (xv[c] - mean) * istd;
      ov[c] = xh[c] * gamma->v[c] + beta->v[c];
    }
  }
  if (tape)
    tape->record([x, gamma, beta, out, xhat, inv_std, m, n] {
      std::vector<T> dxhat(n);
      for (int r = 0; r < m; ++r) {
        const T* go = out->g.data() + static_cast<std::size_t>(r) * n;
        const T* xh = xhat->data() + static_cast<std::size_t>(r) * n;
        if (gamma->needs_grad) {
          gamma->ensure_grad();
          for (int c = 0; c < n; ++c) gamma->g[c] += go[c] * xh[c];
        }
        if (beta->needs_grad) {
          beta->ensure_grad();
          for (int c = 0; c < n; ++c) beta->g[c] += go[c];
        }
        if (!x->needs_grad) continue;
        x->ensure_grad();
        T sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int c = 0; c < n; ++c) {
          dxhat[c] = go[c] * gamma->v[c];
          sum_dxhat += dxhat[c];
          sum_dxhat_xhat += dxhat[c] * xh[c];
        }
        T* gx = x->g.data() + static_cast<std::size_t>(r) * n;
        const T istd = (*inv_std)[r];
        for (int c = 0; c < n; ++c)
          gx[c] += istd * (dxhat[c] - (sum_dxhat + xh[c] * sum_dxhat_xhat) / T(n));
      }
    });
  return out;
}

// Row-wise softmax with key masking: masked columns get exactly zero weight.
// key_mask[j] == 0 marks column j masked. Throws if every key is masked.
template <typename T>
TensorPtr<T> softmax_rows_masked(Tape<T>* tape, const TensorPtr<T>& scores,
                                 const std::vector<int>& key_mask) {
  const int m = scores->rows, n = scores->cols;
  if (static_cast<int>(key_mask.size()) != n)
    throw data_error("softmax: mask length mismatch");
  bool any = false;
  for (int j = 0; j < n; ++j) any = any || key_mask[j] != 0;
  if (!any) throw data_error("fully masked row");
  auto out = detail::fresh(tape, m, n);
  for (int r = 0; r < m; ++r) {
    const T* sv = scores->v.data() + static_cast<std::size_t>(r) * n;
    T* ov = out->v.data() + static_cast<std::size_t>(r) * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (int c = 0; c < n; ++c)
      if (key_mask[c]) mx = std::max(mx, sv[c]);
    T z = 0;
    for (int c = 0; c < n; ++c) {
      if (key_mask[c]) {
        ov[c] = std::exp(sv[c] - mx);
        z += ov[c];
      } else {
        ov[c] = T(0);
      }
    }
    for (int c = 0; c < n; ++c) ov[c] /= z;
  }
  if (tape) {
    auto mask = std::make_shared<std::vector<int>>(key_mask);
    tape->record([scores, out, mask, m, n] {
      if (!scores->needs_grad) return;
      scores->ensure_grad();
      for (int r = 0; r < m; ++r) {
        const T* p = out->v.data() + static_cast<std::size_t>(r) * n;
        const T* gp = out->g.data() + static_cast<std::size_t>(r) * n;
        T dot = 0;
        for (int c = 0; c < n; ++c) dot += p[c] * gp[c];
        T* gs = scores->g.data() + static_cast<std::size_t>(r) * n;
        for (int c = 0; c < n; ++c)
          if ((*mask)[c]) gs[c] += p[c] * (gp[c] - dot);
      }
    });
  }
  return out;
}

// Row gather (embedding lookup): out[i] = table[ids[i]].
template <typename T>
TensorPtr<T> gather_rows(Tape<T>* tape, const TensorPtr<T>& table, const std::vector<int>& ids) {
  const int n = table->cols;
  for (int id : ids)
    if (id < 0 || id >= table->rows)
      throw data_error("gather: id out of range: " + std::to_string(id));
  auto out = detail::fresh(tape, static_cast<int>(ids.size()), n);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table->v.data() + static_cast<std::size_t>(ids[i]) * n, n,
                out->v.data() + i * n);
  if (tape) {
    auto idx = std::make_shared<std::vector<int>>(ids);
    tape->record([table, out, idx, n] {
      if (!table->needs_grad) return;
      table->ensure_grad();
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const T* go = out->g.data() + i * n;
        T* gt = table->g.data() + static_cast<std::size_t>((*idx)[i]) * n;
        for (int c = 0; c < n; ++c) gt[c] += go[c];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> slice_cols(Tape<T>* tape, const TensorPtr<T>& x, int c0, int c1) {
  if (c0 < 0 || c1 > x->cols || c0 >= c1) throw data_error("slice_cols: bad range");
  const int w = c1 - c0;
  auto out = detail::fresh(tape, x->rows, w);
  for (int r = 0; r < x->rows; ++r)
    std::copy_n(x->v.data() + static_cast<std::size_t>(r) * x->cols + c0, w,
                out->v.data() + static_cast<std::size_t>(r) * w);
  if (tape)
    tape->record([x, out, c0, w] {
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (int r = 0; r < x->rows; ++r) {
        const T* go = out->g.data() + static_cast<std::size_t>(r) * w;
        T* gx = x->g.data() + static_cast<std::size_t>(r) * x->cols + c0;
        for (int c = 0; c < w; ++c) gx[c] += go[c];
      }
    });
  return out;
}

template <typename T>
TensorPtr<T> concat_cols(Tape<T>* tape, const std::vector<TensorPtr<T>>& xs) {
  if (xs.empty()) throw data_error("concat_cols: empty input");
  const int m = xs[0]->rows;
  int total = 0;
  for (const auto& x : xs) {
    if (x->rows != m) throw data_error("concat_cols: row mismatch");
    total += x->cols;
  }
  auto out = detail::fresh(tape, m, total);
  int off = 0;
  for (const auto& x : xs) {
    for (int r = 0; r < m; ++r)
      std::copy_n(x->v.data() + static_cast<std::size_t>(r) * x->cols, x->cols,
                  out->v.data() + static_cast<std::size_t>(r) * total + off);
    off += x->cols;
  }
  if (tape)
    tape->record([xs, out, m, total] {
      int off = 0;
      for (const auto& x : xs) {
        if (x->needs_grad) {
          x->ensure_grad();
          for (int r = 0; r < m; ++r) {
            const T* go = out->g.data() + static_cast<std::size_t>(r) * total + off;
            T* gx = x->g.data() + static_cast<std::size_t>(r) * x->cols;
            for (int c = 0; c < x->cols; ++c) gx[c] += go[c];
          }
        }
        off += x->cols;
      }
    });
  return out;
}

template <typename T>
TensorPtr<T> pick_row(Tape<T>* tape, const TensorPtr<T>& x, int row) {
  if (row < 0 || row >= x->rows) throw data_error("pick_row: out of range");
  auto out = detail::fresh(tape, 1, x->cols);
  std::copy_n(x->v.data() + static_cast<std::size_t>(row) * x->cols, x->cols, out->v.data());
  if (tape)
    tape->record([x, out, row] {
      if (!x->needs_grad) return;
      x->ensure_grad();
      T* gx = x->g.data() + static_cast<std::size_t>(row) * x->cols;
      for (int c = 0; c < x->cols; ++c) gx[c] += out->g[c];
    });
  return out;
}

// Inverted dropout; identity when rate == 0.
template <typename T>
TensorPtr<T> dropout(Tape<T>* tape, const TensorPtr<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x->size());
  for (auto& m : *mask) m = rng.next_uniform() < rate ? T(0) : keep_scale;
  auto out = detail::fresh(tape, x->rows, x->cols);
  for (std::size_t i = 0; i < x->size(); ++i) out->v[i] = x->v[i] * (*mask)[i];
  if (tape)
    tape->record([x, out, mask] {
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->size(); ++i) x->g[i] += out->g[i] * (*mask)[i];
    });
  return out;
}

// Sum of per-row cross entropies from logits: sum_r (logsumexp(row r) - row_r[target_r]).
template <typename T>
TensorPtr<T> cross_entropy_rows(Tape<T>* tape, const TensorPtr<T>& logits,
                                const std::vector<int>& targets) {
  const int m = logits->rows, n = logits->cols;
  if (static_cast<int>(targets.size()) != m)
    throw data_error("cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= n) throw data_error("cross_entropy: target out of range");
  auto out = detail::fresh(tape, 1, 1);
  auto probs = std::make_shared<std::vector<T>>(logits->size());
  T total = 0;
  for (int r = 0; r < m; ++r) {
    const T* lv = logits->v.data() + static_cast<std::size_t>(r) * n;
    T mx = lv[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, lv[c]);
    T z = 0;
    T* pv = probs->data() + static_cast<std::size_t>(r) * n;
    for (int c = 0; c < n; ++c) {
      pv[c] = std::exp(lv[c] - mx);
      z += pv[c];
    }
    for (int c = 0; c < n; ++c) pv[c] /= z;
    total += std::log(z) + mx - lv[targets[r]];
  }
  out->v[0] = total;
  if (tape) {
    auto tgt = std::make_shared<std::vector<int>>(targets);
    tape->record([logits, out, probs, tgt, m, n] {
      if (!logits->needs_grad) return;
      logits->ensure_grad();
      const T seed = out->g[0];
      for (int r = 0; r < m; ++r) {
        const T* pv = probs->data() + static_cast<std::size_t>(r) * n;
        T* gl = logits->g.data() + static_cast<std::size_t>(r) * n;
        for (int c = 0; c < n; ++c) gl[c] += seed * pv[c];
        gl[(*tgt)[r]] -= seed;
      }
    });
  }
  return out;
}

// Binary cross entropy on a logit: softplus(z) - y*z, numerically stable.
template <typename T>
TensorPtr<T> bce_with_logit(Tape<T>* tape, const TensorPtr<T>& logit, int y) {
  if (logit->size() != 1) throw data_error("bce: logit must be scalar");
  if (y != 0 && y != 1) throw data_error("bce: label must be 0 or 1");
  const T z = logit->v[0];
  auto out = detail::fresh(tape, 1, 1);
  const T softplus = std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
  out->v[0] = softplus - T(y) * z;
  if (tape)
    tape->record([logit, out, y] {
      if (!logit->needs_grad) return;
      logit->ensure_grad();
      const T z = logit->v[0];
      const T sig = T(1) / (T(1) + std::exp(-z));
      logit->g[0] += out->g[0] * (sig - T(y));
    });
  return out;
}

template <typename T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = detail::fresh(tape, 1, 1);
  T total = 0;
  for (const T v : x->v) total += v;
  out->v[0] = total;
  if (tape)
    tape->record([x, out] {
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (auto& gv : x->g) gv += out->g[0];
    });
  return out;
}

// Weighted sum of scalars: sum_i w_i * s_i.
template <typename T>
TensorPtr<T> weighted_sum(Tape<T>* tape, const std::vector<TensorPtr<T>>& scalars,
                          const std::vector<T>& weights) {
  if (scalars.size() != weights.size()) throw data_error("weighted_sum: size mismatch");
  auto out = detail::fresh(tape, 1, 1);
  T total = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i]->size() != 1) throw data_error("weighted_sum: non-scalar input");
    total += weights[i] * scalars[i]->v[0];
  }
  out->v[0] = total;
  if (tape) {
    auto w = std::make_shared<std::vector<T>>(weights);
    tape->record([scalars, out, w] {
      for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (!scalars[i]->needs_grad) continue;
        scalars[i]->ensure_grad();
        scalars[i]->g[0] += out->g[0] * (*w)[i];
      }
    });
  }
  return out;
}

}  // namespace rsdpt
