#pragma once

#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rsdpt/corpus.hpp"
#include "rsdpt/encoder.hpp"
#include "rsdpt/vocab.hpp"

namespace rsdpt {

// Candidate scores for one instance plus the ground-truth position.
struct RankingRecord {
  std::vector<double> scores;
  int ground_truth_index = 0;
};

struct Metrics {
  int n = 0;  // candidates per instance
  std::map<int, double> recall_at;
  double mrr = 0.0;
  int num_instances = 0;
};

// 1-based rank of the ground truth; ties break by candidate index, so equal
// scores rank in position order.
int rank_of_truth(const RankingRecord& record);

// Fraction of records whose ground truth ranks in the top k. All records
// must have the same candidate count.
double recall_at_k(const std::vector<RankingRecord>& records, int k);

double mean_reciprocal_rank(const std::vector<RankingRecord>& records);

Metrics compute_metrics(const std::vector<RankingRecord>& records, const std::vector<int>& ks);

nlohmann::json metrics_to_json(const Metrics& metrics);
void write_score_dump(const std::vector<RankingRecord>& records, const std::string& path);

template <typename T>
RankingRecord score_candidates(const Parameters<T>& params, const Vocab& vocab,
                               const EvalInstance& instance, int max_context_len,
                               int max_response_len, bool with_eot = true) {
  if (instance.candidates.empty()) throw data_error("instance has no candidates");
  std::vector<std::vector<std::string>> context_tokens;
  context_tokens.reserve(instance.context.size());
  for (const auto& utt : instance.context) context_tokens.push_back(tokenize(utt, vocab));
  RankingRecord record;
  record.ground_truth_index = instance.ground_truth_index;
  record.scores.reserve(instance.candidates.size());
  for (const auto& cand : instance.candidates) {
    const ModelInput input = build_model_input(context_tokens, tokenize(cand, vocab), vocab,
                                               max_context_len, max_response_len, with_eot);
    EncodedSeq seq{input.input_ids, input.segment_ids, input.attention_mask};
    record.scores.push_back(static_cast<double>(rs_score(seq, params)));
  }
  return record;
}

// Instances are scored against the read-only parameters, partitioned across
// threads; the output order matches the input order regardless of threads.
template <typename T>
std::vector<RankingRecord> score_all(const Parameters<T>& params, const Vocab& vocab,
                                     const std::vector<EvalInstance>& instances,
                                     int max_context_len, int max_response_len,
                                     bool with_eot = true, int threads = 1) {
  std::vector<RankingRecord> records(instances.size());
  const int workers =
      std::max(1, std::min<int>(threads, static_cast<int>(instances.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < instances.size(); ++i)
      records[i] = score_candidates(params, vocab, instances[i], max_context_len,
                                    max_response_len, with_eot);
    return records;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < instances.size(); i += workers)
        records[i] = score_candidates(params, vocab, instances[i], max_context_len,
                                      max_response_len, with_eot);
    });
  }
  for (auto& th : pool) th.join();
  return records;
}

template <typename T>
Metrics evaluate(const Parameters<T>& params, const Vocab& vocab,
                 const std::vector<EvalInstance>& instances, const std::vector<int>& ks,
                 int max_context_len, int max_response_len, bool with_eot = true,
                 int threads = 1) {
  if (instances.empty()) throw data_error("empty eval set");
  const auto records =
      score_all(params, vocab, instances, max_context_len, max_response_len, with_eot, threads);
  return compute_metrics(records, ks);
}

}  // namespace rsdpt
