#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rsdpt/eval.hpp"
#include "rsdpt/rng.hpp"
#include "support/tmpdir.hpp"

using namespace rsdpt;

namespace {

// Independent brute-force oracle: materialize the full sorted order and look
// up the truth's position.
int oracle_rank(const RankingRecord& r) {
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < static_cast<int>(r.scores.size()); ++i)
    order.emplace_back(r.scores[i], i);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int pos = 0; pos < static_cast<int>(order.size()); ++pos)
    if (order[pos].second == r.ground_truth_index) return pos + 1;
  return -1;
}

double oracle_recall(const std::vector<RankingRecord>& records, int k) {
  int hits = 0;
  for (const auto& r : records)
    if (oracle_rank(r) <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double oracle_mrr(const std::vector<RankingRecord>& records) {
  double sum = 0;
  for (const auto& r : records) sum += 1.0 / oracle_rank(r);
  return sum / static_cast<double>(records.size());
}

std::vector<RankingRecord> random_records(int count, int n, std::uint64_t seed,
                                          bool with_ties = true) {
  Rng rng(seed);
  std::vector<RankingRecord> records(count);
  for (auto& r : records) {
    r.scores.resize(n);
    for (auto& s : r.scores) {
      s = with_ties && rng.next_uniform() < 0.2 ? 0.5 : rng.next_uniform();
    }
    r.ground_truth_index = static_cast<int>(rng.next_int(0, n - 1));
  }
  return records;
}

Vocab tiny_vocab() {
  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[EOT]"};
  for (const char* w : {"hi", "yo", "ok", "go", "no"}) tokens.push_back(w);
  return Vocab::from_tokens(tokens);
}

}  // namespace

TEST_CASE("rank_of_truth: hand-sorted cases") {
  CHECK(rank_of_truth({{0.1, 0.9, 0.5}, 1}) == 1);
  CHECK(rank_of_truth({{0.1, 0.9, 0.5}, 2}) == 2);
  CHECK(rank_of_truth({{0.1, 0.9, 0.5}, 0}) == 3);
}

TEST_CASE("rank_of_truth: ties break by candidate index") {
  const std::vector<double> equal(5, 0.25);
  CHECK(rank_of_truth({equal, 0}) == 1);
  CHECK(rank_of_truth({equal, 4}) == 5);
  CHECK(rank_of_truth({equal, 2}) == 3);
}

TEST_CASE("rank_of_truth: strict maximum ranks first") {
  CHECK(rank_of_truth({{0.2, 0.99, 0.2, 0.2}, 1}) == 1);
}

TEST_CASE("recall_at_k: hand-ranked set") {
  std::vector<RankingRecord> records;
  RankingRecord a;  // rank 1
  a.scores = {0.9, 0.1, 0.2, 0.3, 0.4, 0.5, 0.05, 0.06, 0.07, 0.08};
  a.ground_truth_index = 0;
  RankingRecord b;  // rank 3
  b.scores = {0.5, 0.9, 0.8, 0.1, 0.2, 0.3, 0.05, 0.06, 0.07, 0.08};
  b.ground_truth_index = 0;
  records = {a, b};
  CHECK(recall_at_k(records, 1) == doctest::Approx(0.5));
  CHECK(recall_at_k(records, 2) == doctest::Approx(0.5));
  CHECK(recall_at_k(records, 5) == doctest::Approx(1.0));
  CHECK(recall_at_k(records, 10) == doctest::Approx(1.0));  // k = n
}

TEST_CASE("recall_at_k: mixed candidate counts rejected") {
  std::vector<RankingRecord> records{{{0.1, 0.2}, 0}, {{0.1, 0.2, 0.3}, 0}};
  CHECK_THROWS_WITH_AS(recall_at_k(records, 1), doctest::Contains("mixed"), data_error);
  CHECK_THROWS_AS(recall_at_k({{{0.1, 0.2}, 0}}, 0), data_error);
}

TEST_CASE("mean_reciprocal_rank: hand evaluation") {
  RankingRecord rank1{{0.9, 0.1}, 0};
  RankingRecord rank4{{0.9, 0.8, 0.7, 0.1}, 3};
  CHECK(mean_reciprocal_rank({rank1, rank1}) == doctest::Approx(1.0));
  std::vector<RankingRecord> both{{{0.9, 0.1, 0.2, 0.3}, 0}, rank4};
  CHECK(mean_reciprocal_rank(both) == doctest::Approx((1.0 + 0.25) / 2));
}

TEST_CASE("metrics match the brute-force oracle exactly on 1000 random records") {
  const auto records = random_records(1000, 10, 99);
  for (int k : {1, 2, 5}) CHECK(recall_at_k(records, k) == oracle_recall(records, k));
  CHECK(mean_reciprocal_rank(records) == oracle_mrr(records));
}

TEST_CASE("metrics: monotonicity and MRR lower bound on random records") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto records = random_records(50, 10, seed);
    const double r1 = recall_at_k(records, 1);
    const double r2 = recall_at_k(records, 2);
    const double r5 = recall_at_k(records, 5);
    const double r10 = recall_at_k(records, 10);
    CHECK(r1 <= r2);
    CHECK(r2 <= r5);
    CHECK(r5 <= r10);
    CHECK(r10 == doctest::Approx(1.0));
    CHECK(mean_reciprocal_rank(records) >= r1);
  }
}

TEST_CASE("metrics: invariant under strictly increasing score transforms") {
  const auto records = random_records(200, 8, 7, /*with_ties=*/false);
  auto transformed = records;
  for (auto& r : transformed)
    for (auto& s : r.scores) s = std::exp(3.0 * s) - 0.5;
  for (int k : {1, 2, 5, 8})
    CHECK(recall_at_k(records, k) == recall_at_k(transformed, k));
  CHECK(mean_reciprocal_rank(records) == mean_reciprocal_rank(transformed));
}

TEST_CASE("compute_metrics: fields and report json") {
  const auto records = random_records(100, 10, 3);
  const auto metrics = compute_metrics(records, {1, 2, 5});
  CHECK(metrics.n == 10);
  CHECK(metrics.num_instances == 100);
  CHECK(metrics.recall_at.size() == 3);
  const auto j = metrics_to_json(metrics);
  CHECK(j.at("n") == 10);
  CHECK(j.contains("R@1"));
  CHECK(j.contains("R@2"));
  CHECK(j.contains("R@5"));
  CHECK(j.contains("MRR"));
  CHECK(j.at("num_instances") == 100);
  CHECK_THROWS_AS(compute_metrics({}, {1}), data_error);
  CHECK_THROWS_AS(compute_metrics(records, {11}), data_error);
}

TEST_CASE("score_candidates: zero-head checkpoint scores everything 0.5") {
  const auto vocab = tiny_vocab();
  EncoderConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.ff_size = 16;
  cfg.vocab_size = vocab.size();
  cfg.max_positions = 16;
  Rng rng(5);
  auto params = Parameters<float>::init(cfg, rng);
  std::fill(params.rs_w->v.begin(), params.rs_w->v.end(), 0.0f);
  params.rs_b->v[0] = 0.0f;

  EvalInstance inst;
  inst.context = {"hi yo", "ok"};
  inst.candidates = {"go", "no", "go", "hi yo", "ok go", "no hi", "yo", "ok", "go no", "hi"};
  inst.ground_truth_index = 3;
  const auto record = score_candidates(params, vocab, inst, 12, 4);
  REQUIRE(record.scores.size() == 10);
  for (double s : record.scores) CHECK(s == doctest::Approx(0.5));

  // duplicate candidates score identically under a live head
  Rng rng2(6);
  auto live = Parameters<float>::init(cfg, rng2);
  const auto rec2 = score_candidates(live, vocab, inst, 12, 4);
  CHECK(rec2.scores[0] == rec2.scores[2]);  // both "go"
  for (double s : rec2.scores) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("score_all: threaded scoring matches single-threaded") {
  const auto vocab = tiny_vocab();
  EncoderConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.ff_size = 16;
  cfg.vocab_size = vocab.size();
  cfg.max_positions = 16;
  Rng rng(8);
  auto params = Parameters<float>::init(cfg, rng);
  std::vector<EvalInstance> instances;
  for (int i = 0; i < 9; ++i) {
    EvalInstance inst;
    inst.context = {i % 2 ? "hi yo" : "ok go"};
    for (int c = 0; c < 5; ++c) inst.candidates.push_back(c % 2 ? "no" : "go hi");
    inst.ground_truth_index = i % 5;
    instances.push_back(inst);
  }
  const auto single = score_all(params, vocab, instances, 12, 4, true, 1);
  const auto threaded = score_all(params, vocab, instances, 12, 4, true, 3);
  REQUIRE(single.size() == threaded.size());
  for (std::size_t i = 0; i < single.size(); ++i) CHECK(single[i].scores == threaded[i].scores);
}

TEST_CASE("evaluate: ubuntu-style and advising-style metric sets") {
  const auto vocab = tiny_vocab();
  EncoderConfig cfg;
  cfg.num_layers = 0;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.ff_size = 16;
  cfg.vocab_size = vocab.size();
  cfg.max_positions = 16;
  Rng rng(9);
  auto params = Parameters<float>::init(cfg, rng);

  std::vector<EvalInstance> ubuntu;
  for (int i = 0; i < 6; ++i) {
    EvalInstance inst;
    inst.context = {"hi"};
    for (int c = 0; c < 10; ++c) inst.candidates.push_back(c % 2 ? "no go" : "yo ok");
    inst.ground_truth_index = i % 10;
    ubuntu.push_back(inst);
  }
  const auto m10 = evaluate(params, vocab, ubuntu, {1, 2, 5}, 12, 4);
  CHECK(m10.n == 10);
  CHECK(m10.recall_at.count(5) == 1);

  std::vector<EvalInstance> advising;
  for (int i = 0; i < 3; ++i) {
    EvalInstance inst;
    inst.context = {"ok"};
    for (int c = 0; c < 100; ++c) inst.candidates.push_back(c % 3 ? "no" : "go go");
    inst.ground_truth_index = i;
    advising.push_back(inst);
  }
  const auto m100 = evaluate(params, vocab, advising, {1, 10, 50}, 12, 4);
  CHECK(m100.n == 100);
  CHECK(m100.recall_at.count(50) == 1);
  CHECK(m100.mrr > 0.0);

  CHECK_THROWS_WITH_AS(evaluate(params, vocab, {}, {1}, 12, 4),
                       doctest::Contains("empty eval set"), data_error);
}

TEST_CASE("score dump: one record per instance with rank") {
  testsupport::TmpDir tmp;
  const auto records = random_records(5, 4, 11);
  write_score_dump(records, tmp.file("scores.jsonl"));
  std::ifstream in(tmp.file("scores.jsonl"));
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("instance") == count);
    CHECK(j.at("scores").size() == 4);
    CHECK(j.at("rank").get<int>() >= 1);
    ++count;
  }
  CHECK(count == 5);
}
