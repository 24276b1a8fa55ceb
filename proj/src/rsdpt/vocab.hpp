#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rsdpt/corpus.hpp"

namespace rsdpt {

// Subword vocabulary. Ids are contiguous, the first six are reserved:
// [PAD]=0 [UNK]=1 [CLS]=2 [SEP]=3 [MASK]=4 [EOT]=5. Continuation pieces
// carry the "##" prefix. Immutable after construction.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kEot = 5;
  static constexpr int kNumSpecials = 6;
  static const char* special_token(int id);

  // Frequency-based induction: specials, every character seen (plain and
  // "##"-prefixed), then whole words by descending frequency up to target_size.
  static Vocab build(const std::vector<Dialog>& dialogs, int target_size);

  static Vocab from_tokens(std::vector<std::string> tokens);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  std::optional<int> id_of(const std::string& token) const;
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

 private:
  Vocab() = default;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Whitespace pre-tokenization (lowercased), then greedy longest-match-first
// WordPiece per word; words with no full decomposition become "[UNK]".
std::vector<std::string> tokenize(const std::string& text, const Vocab& vocab);

std::vector<int> encode_ids(const std::vector<std::string>& tokens, const Vocab& vocab);
std::vector<std::string> decode_ids(const std::vector<int>& ids, const Vocab& vocab);

// Model-ready sequence: [CLS] u1 [EOT] ... um [EOT] [SEP] r1..rn [SEP] + padding,
// segment 0 over the context block, 1 over the response block.
struct ModelInput {
  std::vector<int> input_ids;
  std::vector<int> segment_ids;
  std::vector<int> attention_mask;
  int cls_position = 0;
};

// Context is truncated from the front (whole oldest turns first, then tokens)
// and the response from the end. with_eot=false omits the per-turn [EOT]
// markers. Total length is always max_context_len + max_response_len.
ModelInput build_model_input(const std::vector<std::vector<std::string>>& context_utterances,
                             const std::vector<std::string>& response,
                             const Vocab& vocab,
                             int max_context_len,
                             int max_response_len,
                             bool with_eot = true);

void validate_model_input(const ModelInput& input, int expected_len);

// UTF-8 helpers shared with vocab induction; a "character" is one codepoint.
std::vector<std::string> utf8_chars(const std::string& word);

}  // namespace rsdpt
