#include "rsdpt/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "rsdpt/common.hpp"

namespace rsdpt {
namespace {

int per_segment_budget(int q) { return (q - 3) / 2; }

// Concatenate turns, dropping whole turns from the front (oldest first) while
// more than one remains, then trimming tokens from the front.
std::vector<int> shrink_front(const std::vector<std::vector<int>>& turns, int budget) {
  int total = 0;
  for (const auto& t : turns) total += static_cast<int>(t.size());
  std::size_t first = 0;
  while (turns.size() - first > 1 && total > budget) {
    total -= static_cast<int>(turns[first].size());
    ++first;
  }
  std::vector<int> out;
  for (std::size_t i = first; i < turns.size(); ++i)
    out.insert(out.end(), turns[i].begin(), turns[i].end());
  if (static_cast<int>(out.size()) > budget)
    out.erase(out.begin(), out.end() - budget);
  return out;
}

// Same, but drops newest turns and trims from the back.
std::vector<int> shrink_back(const std::vector<std::vector<int>>& turns, int budget) {
  int total = 0;
  for (const auto& t : turns) total += static_cast<int>(t.size());
  std::size_t last = turns.size();
  while (last > 1 && total > budget) {
    total -= static_cast<int>(turns[last - 1].size());
    --last;
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < last; ++i)
    out.insert(out.end(), turns[i].begin(), turns[i].end());
  if (static_cast<int>(out.size()) > budget) out.resize(budget);
  return out;
}

std::vector<std::vector<int>> slice_turns(const TokenizedDialog& d, int begin, int end,
                                          bool with_eot) {
  std::vector<std::vector<int>> out;
  out.reserve(end - begin);
  for (int i = begin; i < end; ++i)
    out.push_back(with_eot ? append_eot(d.turns[i]) : d.turns[i]);
  return out;
}

}  // namespace

std::vector<int> append_eot(const std::vector<int>& utterance_tokens) {
  if (utterance_tokens.empty()) throw data_error("append_eot: empty utterance");
  std::vector<int> out = utterance_tokens;
  out.push_back(Vocab::kEot);
  return out;
}

NspPair sample_nsp_pair(const std::vector<TokenizedDialog>& dialogs, int q, bool with_eot,
                        Rng& rng, std::optional<int> force_label) {
  std::vector<int> eligible;
  for (int i = 0; i < static_cast<int>(dialogs.size()); ++i)
    if (dialogs[i].turns.size() >= 2) eligible.push_back(i);
  const std::size_t needed = force_label.has_value() && *force_label == 1 ? 1 : 2;
  if (eligible.size() < needed)
    throw data_error("insufficient dialogs: need at least " + std::to_string(needed) +
                     " with 2+ utterances");
  const int budget = per_segment_budget(q);
  if (budget < 1) throw data_error("sequence budget too small");

  NspPair pair;
  pair.label = force_label ? *force_label : (rng.next_bool() ? 1 : 0);

  const int a = eligible[rng.next_int(0, static_cast<std::int64_t>(eligible.size()) - 1)];
  const auto& da = dialogs[a];
  const int split = static_cast<int>(rng.next_int(1, static_cast<int>(da.turns.size()) - 1));
  pair.dialog_a = a;
  pair.split = split;
  pair.seg_a = shrink_front(slice_turns(da, 0, split, with_eot), budget);

  if (pair.label == 1) {
    pair.dialog_b = a;
    pair.seg_b =
        shrink_back(slice_turns(da, split, static_cast<int>(da.turns.size()), with_eot), budget);
  } else {
    int b = a;
    while (b == a)
      b = eligible[rng.next_int(0, static_cast<std::int64_t>(eligible.size()) - 1)];
    const auto& db = dialogs[b];
    const int split_b = static_cast<int>(rng.next_int(1, static_cast<int>(db.turns.size()) - 1));
    pair.dialog_b = b;
    pair.seg_b =
        shrink_back(slice_turns(db, split_b, static_cast<int>(db.turns.size()), with_eot), budget);
  }
  return pair;
}

MlmOutcome apply_mlm(const std::vector<int>& input_ids,
                     const std::vector<int>& maskable_positions, Rng& rng, double rate,
                     int vocab_size) {
  if (maskable_positions.empty()) throw data_error("no maskable positions");
  if (rate < 0.0 || rate > 1.0) throw data_error("mask rate must be in [0,1]");
  const int n = static_cast<int>(maskable_positions.size());
  for (int p : maskable_positions)
    if (p < 0 || p >= static_cast<int>(input_ids.size()))
      throw data_error("maskable position out of range");

  // Stochastically rounded count: unbiased in expectation, never above
  // ceil(rate * n), at least one (the forced-selection rule).
  const double expected = rate * n;
  int num = static_cast<int>(std::floor(expected + rng.next_uniform()));
  num = std::max(1, std::min(num, n));

  std::vector<int> chosen = rng.sample_without_replacement(n, num);
  std::sort(chosen.begin(), chosen.end());

  MlmOutcome out;
  out.masked_ids = input_ids;
  out.positions.reserve(num);
  out.targets.reserve(num);
  for (int idx : chosen) {
    const int pos = maskable_positions[idx];
    out.positions.push_back(pos);
    out.targets.push_back(input_ids[pos]);
    const double branch = rng.next_uniform();
    if (branch < 0.8) {
      out.masked_ids[pos] = Vocab::kMask;
    } else if (branch < 0.9) {
      if (vocab_size <= Vocab::kNumSpecials)
        throw data_error("vocab has no non-special ids for random replacement");
      out.masked_ids[pos] =
          Vocab::kNumSpecials +
          static_cast<int>(rng.next_int(0, vocab_size - Vocab::kNumSpecials - 1));
    }  // else: left unchanged
  }
  return out;
}

PretrainExample build_pretrain_example(const NspPair& pair, int q, Rng& rng, int vocab_size,
                                       double mask_rate) {
  const int used = static_cast<int>(pair.seg_a.size() + pair.seg_b.size()) + 3;
  if (used > q)
    throw data_error("segment budget violation: " + std::to_string(used) + " > " +
                     std::to_string(q));

  std::vector<int> ids;
  ids.reserve(q);
  ids.push_back(Vocab::kCls);
  ids.insert(ids.end(), pair.seg_a.begin(), pair.seg_a.end());
  ids.push_back(Vocab::kSep);
  const int seg_boundary = static_cast<int>(ids.size());
  ids.insert(ids.end(), pair.seg_b.begin(), pair.seg_b.end());
  ids.push_back(Vocab::kSep);

  PretrainExample ex;
  ex.segment_ids.assign(seg_boundary, 0);
  ex.segment_ids.resize(ids.size(), 1);
  ex.attention_mask.assign(ids.size(), 1);

  std::vector<int> maskable;
  for (int i = 0; i < static_cast<int>(ids.size()); ++i)
    if (ids[i] >= Vocab::kNumSpecials) maskable.push_back(i);
  MlmOutcome mlm = apply_mlm(ids, maskable, rng, mask_rate, vocab_size);

  ex.input_ids = std::move(mlm.masked_ids);
  ex.mlm_positions = std::move(mlm.positions);
  ex.mlm_targets = std::move(mlm.targets);
  ex.input_ids.resize(q, Vocab::kPad);
  ex.segment_ids.resize(q, 0);
  ex.attention_mask.resize(q, 0);
  ex.nsp_label = pair.label;
  ex.source_dialog_a = pair.dialog_a;
  ex.source_dialog_b = pair.dialog_b;
  ex.source_split = pair.split;
  return ex;
}

void validate_pretrain_example(const PretrainExample& ex, int q, double mask_rate) {
  const auto n = ex.input_ids.size();
  if (static_cast<int>(n) != q) throw data_error("pretrain example: wrong length");
  if (ex.segment_ids.size() != n || ex.attention_mask.size() != n)
    throw data_error("pretrain example: field lengths differ");
  if (ex.mlm_positions.size() != ex.mlm_targets.size())
    throw data_error("pretrain example: positions/targets mismatch");
  if (ex.mlm_positions.empty()) throw data_error("pretrain example: no masked positions");
  if (ex.nsp_label != 0 && ex.nsp_label != 1)
    throw data_error("pretrain example: bad nsp label");

  // Restore the pre-masking sequence, then check the structural layout.
  std::vector<int> original = ex.input_ids;
  for (std::size_t i = 0; i < ex.mlm_positions.size(); ++i) {
    const int p = ex.mlm_positions[i];
    if (p < 0 || p >= static_cast<int>(n)) throw data_error("pretrain example: position range");
    original[p] = ex.mlm_targets[i];
  }
  if (original[0] != Vocab::kCls) throw data_error("pretrain example: must start with [CLS]");
  int content = 0;
  while (content < static_cast<int>(n) && ex.attention_mask[content] == 1) ++content;
  for (int i = content; i < static_cast<int>(n); ++i) {
    if (ex.attention_mask[i] != 0) throw data_error("pretrain example: mask not a prefix");
    if (original[i] != Vocab::kPad) throw data_error("pretrain example: padding corrupted");
  }
  int seps = 0, maskable = 0;
  for (int i = 0; i < content; ++i) {
    if (original[i] == Vocab::kSep) ++seps;
    if (original[i] >= Vocab::kNumSpecials) ++maskable;
  }
  if (seps != 2) throw data_error("pretrain example: need exactly two [SEP]");
  for (std::size_t i = 0; i < ex.mlm_positions.size(); ++i) {
    if (ex.mlm_positions[i] >= content)
      throw data_error("pretrain example: masked position in padding");
    if (original[ex.mlm_positions[i]] < Vocab::kNumSpecials)
      throw data_error("pretrain example: masked a special token");
  }
  const int cap = std::max(1, static_cast<int>(std::ceil(mask_rate * maskable)));
  if (static_cast<int>(ex.mlm_positions.size()) > cap)
    throw data_error("pretrain example: too many masked positions");
}

PretrainGenerator::PretrainGenerator(const std::vector<Dialog>& dialogs, const Vocab& vocab,
                                     int q, std::uint64_t seed, double mask_rate, bool with_eot)
    : q_(q), vocab_size_(vocab.size()), mask_rate_(mask_rate), with_eot_(with_eot), base_(seed) {
  if (q < 8) throw data_error("sequence length must be >= 8");
  dialogs_.reserve(dialogs.size());
  int eligible = 0;
  for (const auto& d : dialogs) {
    TokenizedDialog td;
    td.turns.reserve(d.utterances.size());
    for (const auto& u : d.utterances) td.turns.push_back(encode_ids(tokenize(u, vocab), vocab));
    if (td.turns.size() >= 2) ++eligible;
    dialogs_.push_back(std::move(td));
  }
  if (eligible < 2) throw data_error("insufficient dialogs: need at least 2 with 2+ utterances");
}

PretrainExample PretrainGenerator::at(std::int64_t index) const {
  Rng rng = base_.derive(static_cast<std::uint64_t>(index));
  NspPair pair = sample_nsp_pair(dialogs_, q_, with_eot_, rng);
  return build_pretrain_example(pair, q_, rng, vocab_size_, mask_rate_);
}

std::vector<PretrainExample> generate_pretrain_set(const std::vector<Dialog>& dialogs,
                                                   const Vocab& vocab, std::int64_t count, int q,
                                                   std::uint64_t seed, double mask_rate,
                                                   bool with_eot) {
  PretrainGenerator gen(dialogs, vocab, q, seed, mask_rate, with_eot);
  std::vector<PretrainExample> out;
  out.reserve(count);
  for (std::int64_t i = 0; i < count; ++i) out.push_back(gen.at(i));
  return out;
}

void save_pretrain_jsonl(const std::vector<PretrainExample>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out.is_open()) throw data_error("cannot write file: " + path);
  for (const auto& ex : examples) {
    nlohmann::json j{{"input_ids", ex.input_ids},
                     {"segment_ids", ex.segment_ids},
                     {"attention_mask", ex.attention_mask},
                     {"mlm_positions", ex.mlm_positions},
                     {"mlm_targets", ex.mlm_targets},
                     {"nsp_label", ex.nsp_label}};
    out << j.dump() << '\n';
  }
}

std::vector<PretrainExample> load_pretrain_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw data_error("cannot open file: " + path);
  std::vector<PretrainExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      PretrainExample ex;
      ex.input_ids = j.at("input_ids").get<std::vector<int>>();
      ex.segment_ids = j.at("segment_ids").get<std::vector<int>>();
      ex.attention_mask = j.at("attention_mask").get<std::vector<int>>();
      ex.mlm_positions = j.at("mlm_positions").get<std::vector<int>>();
      ex.mlm_targets = j.at("mlm_targets").get<std::vector<int>>();
      ex.nsp_label = j.at("nsp_label").get<int>();
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw data_error("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace rsdpt
