#include "rsdpt/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "rsdpt/common.hpp"

namespace rsdpt {
namespace {

const char* kSpecials[Vocab::kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]",
                                              "[SEP]", "[MASK]", "[EOT]"};

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

std::vector<std::string> utf8_chars(const std::string& word) {
  std::vector<std::string> chars;
  std::size_t i = 0;
  while (i < word.size()) {
    const unsigned char b = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if ((b & 0x80u) == 0) {
      len = 1;
    } else if ((b & 0xE0u) == 0xC0u) {
      len = 2;
    } else if ((b & 0xF0u) == 0xE0u) {
      len = 3;
    } else if ((b & 0xF8u) == 0xF0u) {
      len = 4;
    }
    len = std::min(len, word.size() - i);
    chars.push_back(word.substr(i, len));
    i += len;
  }
  return chars;
}

const char* Vocab::special_token(int id) { return kSpecials[id]; }

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  if (tokens.size() < kNumSpecials) throw data_error("vocab must contain the six specials");
  for (int i = 0; i < kNumSpecials; ++i)
    if (tokens[i] != kSpecials[i])
      throw data_error("vocab token " + std::to_string(i) + " must be " +
                       std::string(kSpecials[i]) + ", got " + tokens[i]);
  v.tokens_ = std::move(tokens);
  v.ids_.reserve(v.tokens_.size());
  for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) {
    auto [it, inserted] = v.ids_.emplace(v.tokens_[i], i);
    if (!inserted) throw data_error("duplicate vocab token: " + v.tokens_[i]);
  }
  return v;
}

Vocab Vocab::build(const std::vector<Dialog>& dialogs, int target_size) {
  std::map<std::string, std::pair<std::int64_t, std::size_t>> word_stats;  // count, first seen
  std::set<std::string> chars;
  std::size_t order = 0;
  for (const auto& d : dialogs) {
    for (const auto& utt : d.utterances) {
      for (const auto& raw : split_words(lowercase(utt))) {
        auto [it, inserted] = word_stats.emplace(raw, std::make_pair(0, order));
        if (inserted) ++order;
        it->second.first += 1;
        for (const auto& c : utf8_chars(raw)) chars.insert(c);
      }
    }
  }
  if (word_stats.empty()) throw data_error("empty corpus");

  const int floor_size = kNumSpecials + 2 * static_cast<int>(chars.size());
  if (target_size < floor_size)
    throw data_error("vocab budget too small: need at least " + std::to_string(floor_size) +
                     " for specials and characters, got " + std::to_string(target_size));

  std::vector<std::string> tokens(kSpecials, kSpecials + kNumSpecials);
  for (const auto& c : chars) tokens.push_back(c);
  for (const auto& c : chars) tokens.push_back("##" + c);

  std::vector<std::pair<std::string, std::pair<std::int64_t, std::size_t>>> words(
      word_stats.begin(), word_stats.end());
  std::sort(words.begin(), words.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  std::set<std::string> present(tokens.begin(), tokens.end());
  for (const auto& [word, stats] : words) {
    if (static_cast<int>(tokens.size()) >= target_size) break;
    if (present.count(word)) continue;  // single-character words are already in
    tokens.push_back(word);
    present.insert(word);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw data_error("cannot open vocab file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out.is_open()) throw data_error("cannot write vocab file: " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw data_error("id out of range: " + std::to_string(id));
  return tokens_[id];
}

std::optional<int> Vocab::id_of(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<std::string> out;
  for (const auto& word : split_words(lowercase(text))) {
    const auto chars = utf8_chars(word);
    std::vector<std::string> pieces;
    bool bad = false;
    std::size_t start = 0;
    while (start < chars.size()) {
      std::size_t end = chars.size();
      std::string match;
      while (end > start) {
        std::string sub;
        for (std::size_t i = start; i < end; ++i) sub += chars[i];
        if (start > 0) sub = "##" + sub;
        if (vocab.id_of(sub)) {
          match = std::move(sub);
          break;
        }
        --end;
      }
      if (match.empty()) {
        bad = true;
        break;
      }
      pieces.push_back(std::move(match));
      start = end;
    }
    if (bad || pieces.empty()) {
      out.emplace_back(Vocab::special_token(Vocab::kUnk));
    } else {
      out.insert(out.end(), pieces.begin(), pieces.end());
    }
  }
  return out;
}

std::vector<int> encode_ids(const std::vector<std::string>& tokens, const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    const auto id = vocab.id_of(t);
    if (!id) throw data_error("token not in vocab: " + t);
    ids.push_back(*id);
  }
  return ids;
}

std::vector<std::string> decode_ids(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(vocab.token(id));
  return tokens;
}

ModelInput build_model_input(const std::vector<std::vector<std::string>>& context_utterances,
                             const std::vector<std::string>& response,
                             const Vocab& vocab,
                             int max_context_len,
                             int max_response_len,
                             bool with_eot) {
  if (context_utterances.empty() && response.empty()) throw data_error("empty input");
  if (context_utterances.empty()) throw data_error("empty input: context has no utterances");
  const int q = max_context_len + max_response_len;

  // Response tokens are capped at max_response_len (truncated from the end);
  // its closing [SEP] takes one slot out of the context budget so the total
  // never exceeds q.
  std::vector<int> resp_ids;
  for (std::size_t i = 0; i < response.size() && static_cast<int>(i) < max_response_len; ++i) {
    const auto id = vocab.id_of(response[i]);
    resp_ids.push_back(id ? *id : Vocab::kUnk);
  }

  const int ctx_budget = max_context_len - 1;  // holds [CLS], turns, first [SEP]
  std::vector<std::vector<int>> turns;
  turns.reserve(context_utterances.size());
  for (const auto& utt : context_utterances) {
    std::vector<int> ids;
    ids.reserve(utt.size() + 1);
    for (const auto& tok : utt) {
      const auto id = vocab.id_of(tok);
      ids.push_back(id ? *id : Vocab::kUnk);
    }
    if (with_eot) ids.push_back(Vocab::kEot);
    turns.push_back(std::move(ids));
  }

  const int ctx_cap = ctx_budget - 2;  // room for [CLS] and the first [SEP]
  if (ctx_cap < 0) throw data_error("max_context_len too small");
  // Drop whole oldest turns while more than one remains, then trim the front
  // of what is left so the most recent tokens survive.
  int content = 0;
  for (const auto& t : turns) content += static_cast<int>(t.size());
  std::size_t first_turn = 0;
  while (turns.size() - first_turn > 1 && content > ctx_cap) {
    content -= static_cast<int>(turns[first_turn].size());
    ++first_turn;
  }
  std::vector<int> ctx_ids;
  for (std::size_t i = first_turn; i < turns.size(); ++i)
    ctx_ids.insert(ctx_ids.end(), turns[i].begin(), turns[i].end());
  if (static_cast<int>(ctx_ids.size()) > ctx_cap)
    ctx_ids.erase(ctx_ids.begin(), ctx_ids.end() - ctx_cap);

  ModelInput input;
  input.input_ids.push_back(Vocab::kCls);
  input.input_ids.insert(input.input_ids.end(), ctx_ids.begin(), ctx_ids.end());
  input.input_ids.push_back(Vocab::kSep);
  const int ctx_block = static_cast<int>(input.input_ids.size());
  input.input_ids.insert(input.input_ids.end(), resp_ids.begin(), resp_ids.end());
  input.input_ids.push_back(Vocab::kSep);
  const int used = static_cast<int>(input.input_ids.size());

  input.segment_ids.assign(ctx_block, 0);
  input.segment_ids.resize(used, 1);
  input.attention_mask.assign(used, 1);
  input.input_ids.resize(q, Vocab::kPad);
  input.segment_ids.resize(q, 0);
  input.attention_mask.resize(q, 0);
  input.cls_position = 0;
  return input;
}

void validate_model_input(const ModelInput& input, int expected_len) {
  const auto n = input.input_ids.size();
  if (static_cast<int>(n) != expected_len)
    throw data_error("model input length mismatch");
  if (input.segment_ids.size() != n || input.attention_mask.size() != n)
    throw data_error("model input field lengths differ");
  if (n == 0 || input.input_ids[0] != Vocab::kCls)
    throw data_error("model input must begin with [CLS]");
  int seps = 0;
  bool seen_pad = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (input.input_ids[i] == Vocab::kSep) ++seps;
    if (input.attention_mask[i] == 0) {
      seen_pad = true;
      if (input.input_ids[i] != Vocab::kPad) throw data_error("masked position is not [PAD]");
      if (input.segment_ids[i] != 0) throw data_error("padding must carry segment 0");
    } else if (seen_pad) {
      throw data_error("attention mask must be a prefix of ones");
    }
  }
  if (seps != 2) throw data_error("model input must contain exactly two [SEP]");
}

}  // namespace rsdpt
