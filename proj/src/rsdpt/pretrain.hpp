#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsdpt/corpus.hpp"
#include "rsdpt/rng.hpp"
#include "rsdpt/vocab.hpp"

namespace rsdpt {

// One joint MLM+NSP training instance. nsp_label: 1 = IsNext, 0 = NotNext.
// The source_* fields are generator bookkeeping (which dialogs the segments
// came from); they are not serialized.
struct PretrainExample {
  std::vector<int> input_ids;
  std::vector<int> segment_ids;
  std::vector<int> attention_mask;
  std::vector<int> mlm_positions;
  std::vector<int> mlm_targets;
  int nsp_label = 1;
  int source_dialog_a = -1;
  int source_dialog_b = -1;
  int source_split = -1;
};

// Throws if a structural invariant is violated: masked positions on special
// tokens or padding, malformed segment layout, target/position mismatch.
void validate_pretrain_example(const PretrainExample& ex, int q, double mask_rate = 0.15);

std::vector<int> append_eot(const std::vector<int>& utterance_tokens);

struct NspPair {
  std::vector<int> seg_a;
  std::vector<int> seg_b;
  int label = 1;  // 1 = IsNext
  int dialog_a = -1;
  int dialog_b = -1;
  int split = -1;  // seg_a covers turns [.., split), seg_b starts at split
};

struct TokenizedDialog {
  std::vector<std::vector<int>> turns;
};

// Draw a segment pair for NSP. With probability 0.5 the pair is sequential
// (IsNext): a dialog is split at a random point and the two sides become the
// segments. Otherwise segment B is drawn the same way from a different
// dialog. Each side is shrunk (whole turns from segment A's front / segment
// B's back, then token-level) to the per-segment budget (q-3)/2.
// force_label restricts the draw for tests and single-dialog corpora.
NspPair sample_nsp_pair(const std::vector<TokenizedDialog>& dialogs, int q, bool with_eot,
                        Rng& rng, std::optional<int> force_label = std::nullopt);

struct MlmOutcome {
  std::vector<int> masked_ids;
  std::vector<int> positions;
  std::vector<int> targets;
};

// Select ~rate of the maskable positions (at least one, never more than
// ceil(rate * maskable)); each selected position becomes [MASK] w.p. 0.8, a
// random non-special id w.p. 0.1, or stays unchanged w.p. 0.1. Targets hold
// the original ids.
MlmOutcome apply_mlm(const std::vector<int>& input_ids,
                     const std::vector<int>& maskable_positions, Rng& rng, double rate,
                     int vocab_size);

PretrainExample build_pretrain_example(const NspPair& pair, int q, Rng& rng, int vocab_size,
                                       double mask_rate = 0.15);

// Deterministic random-access stream: example i depends only on (seed, i).
class PretrainGenerator {
 public:
  PretrainGenerator(const std::vector<Dialog>& dialogs, const Vocab& vocab, int q,
                    std::uint64_t seed, double mask_rate = 0.15, bool with_eot = true);

  PretrainExample at(std::int64_t index) const;
  int vocab_size() const { return vocab_size_; }
  int seq_len() const { return q_; }

 private:
  std::vector<TokenizedDialog> dialogs_;
  int q_;
  int vocab_size_;
  double mask_rate_;
  bool with_eot_;
  Rng base_;
};

std::vector<PretrainExample> generate_pretrain_set(const std::vector<Dialog>& dialogs,
                                                   const Vocab& vocab, std::int64_t count, int q,
                                                   std::uint64_t seed, double mask_rate = 0.15,
                                                   bool with_eot = true);

void save_pretrain_jsonl(const std::vector<PretrainExample>& examples, const std::string& path);
std::vector<PretrainExample> load_pretrain_jsonl(const std::string& path);

}  // namespace rsdpt
