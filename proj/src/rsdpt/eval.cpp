#include "rsdpt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rsdpt {

int rank_of_truth(const RankingRecord& record) {
  const int n = static_cast<int>(record.scores.size());
  if (record.ground_truth_index < 0 || record.ground_truth_index >= n)
    throw data_error("ground_truth_index out of range");
  const double truth = record.scores[record.ground_truth_index];
  if (!std::isfinite(truth)) throw data_error("non-finite score");
  int rank = 1;
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(record.scores[i])) throw data_error("non-finite score");
    if (record.scores[i] > truth) ++rank;
    else if (record.scores[i] == truth && i < record.ground_truth_index) ++rank;
  }
  return rank;
}

double recall_at_k(const std::vector<RankingRecord>& records, int k) {
  if (records.empty()) throw data_error("empty record set");
  if (k < 1) throw data_error("k must be >= 1");
  const std::size_t n = records.front().scores.size();
  int hits = 0;
  for (const auto& r : records) {
    if (r.scores.size() != n) throw data_error("mixed candidate counts across records");
    if (rank_of_truth(r) <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double mean_reciprocal_rank(const std::vector<RankingRecord>& records) {
  if (records.empty()) throw data_error("empty record set");
  double sum = 0.0;
  for (const auto& r : records) sum += 1.0 / static_cast<double>(rank_of_truth(r));
  return sum / static_cast<double>(records.size());
}

Metrics compute_metrics(const std::vector<RankingRecord>& records, const std::vector<int>& ks) {
  if (records.empty()) throw data_error("empty record set");
  Metrics m;
  m.n = static_cast<int>(records.front().scores.size());
  m.num_instances = static_cast<int>(records.size());
  for (int k : ks) {
    if (k > m.n) throw data_error("k exceeds candidate count");
    m.recall_at[k] = recall_at_k(records, k);
  }
  m.mrr = mean_reciprocal_rank(records);
  return m;
}

nlohmann::json metrics_to_json(const Metrics& metrics) {
  nlohmann::json j;
  j["n"] = metrics.n;
  for (const auto& [k, v] : metrics.recall_at) j["R@" + std::to_string(k)] = v;
  j["MRR"] = metrics.mrr;
  j["num_instances"] = metrics.num_instances;
  return j;
}

void write_score_dump(const std::vector<RankingRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out.is_open()) throw data_error("cannot write file: " + path);
  for (std::size_t i = 0; i < records.size(); ++i) {
    nlohmann::json j{{"instance", i},
                     {"scores", records[i].scores},
                     {"rank", rank_of_truth(records[i])}};
    out << j.dump() << '\n';
  }
}

}  // namespace rsdpt
