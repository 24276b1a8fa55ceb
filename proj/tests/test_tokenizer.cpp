#include <doctest.h>

#include <set>

#include "rsdpt/rng.hpp"
#include "rsdpt/common.hpp"
#include "rsdpt/vocab.hpp"
#include "support/tmpdir.hpp"

using namespace rsdpt;

namespace {

Vocab vocab_from(const std::vector<std::string>& extra) {
  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[EOT]"};
  tokens.insert(tokens.end(), extra.begin(), extra.end());
  return Vocab::from_tokens(tokens);
}

std::vector<Dialog> corpus_of(const std::vector<std::string>& utterances) {
  return {{"d0", utterances}};
}

}  // namespace

TEST_CASE("build_vocab: reserved ids and frequency order") {
  const auto vocab = Vocab::build(corpus_of({"hi hi bye"}), 20);
  for (int i = 0; i < Vocab::kNumSpecials; ++i)
    CHECK(vocab.token(i) == std::string(Vocab::special_token(i)));
  CHECK(vocab.id_of("hi").has_value());
  CHECK(vocab.id_of("bye").has_value());
  CHECK(*vocab.id_of("hi") < *vocab.id_of("bye"));  // higher frequency first
  CHECK(vocab.size() <= 20);
}

TEST_CASE("build_vocab: single characters present in plain and ## form") {
  const auto vocab = Vocab::build(corpus_of({"hi hi bye"}), 30);
  for (const char* c : {"h", "i", "b", "y", "e"}) {
    CHECK(vocab.id_of(c).has_value());
    CHECK(vocab.id_of("##" + std::string(c)).has_value());
  }
}

TEST_CASE("build_vocab: errors") {
  CHECK_THROWS_WITH_AS(Vocab::build({}, 100), doctest::Contains("empty corpus"), data_error);
  CHECK_THROWS_WITH_AS(Vocab::build(corpus_of({"a"}), 6),
                       doctest::Contains("vocab budget too small"), data_error);
}

TEST_CASE("tokenize: greedy longest match reproduces the subword split") {
  const auto vocab = vocab_from({"sud", "##o", "apt", "-", "get", "install", "cuda"});
  const auto tokens = tokenize("sudo apt - get install cuda", vocab);
  CHECK(tokens == std::vector<std::string>{"sud", "##o", "apt", "-", "get", "install", "cuda"});
}

TEST_CASE("tokenize: whole-word hit and OOV fallback") {
  const auto vocab = vocab_from({"apt"});
  CHECK(tokenize("apt", vocab) == std::vector<std::string>{"apt"});
  CHECK(tokenize("\xc5\xbc\xc3\xb3\xc5\x82\xc4\x87", vocab) ==
        std::vector<std::string>{"[UNK]"});  // żółć with no matching pieces
}

TEST_CASE("tokenize: lowercases input") {
  const auto vocab = vocab_from({"apt"});
  CHECK(tokenize("APT", vocab) == std::vector<std::string>{"apt"});
}

TEST_CASE("tokenize: join property reconstructs each word") {
  // Any whitespace word either round-trips through the pieces or is [UNK].
  const auto dialogs = corpus_of({"alpha beta gamma", "alphabet bet better", "gam gamma ma"});
  const auto vocab = Vocab::build(dialogs, 60);
  Rng rng(5);
  const std::string charset = "abcdefgh ";
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    for (int i = 0; i < 24; ++i) text += charset[rng.next_int(0, charset.size() - 1)];
    std::istringstream words(text);
    std::string word;
    while (words >> word) {
      const auto pieces = tokenize(word, vocab);
      if (pieces.size() == 1 && pieces[0] == "[UNK]") continue;
      std::string joined;
      for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (i == 0) {
          CHECK(pieces[i].substr(0, 2) != "##");
          joined += pieces[i];
        } else {
          CHECK(pieces[i].substr(0, 2) == "##");
          joined += pieces[i].substr(2);
        }
      }
      CHECK(joined == word);
    }
  }
}

TEST_CASE("encode/decode: reserved ids and roundtrip") {
  const auto vocab = vocab_from({"apt", "##o"});
  CHECK(encode_ids({"[CLS]"}, vocab) == std::vector<int>{2});
  const std::vector<std::string> tokens{"apt", "##o"};
  CHECK(decode_ids(encode_ids(tokens, vocab), vocab) == tokens);
  CHECK_THROWS_WITH_AS(encode_ids({"nonexistent-token"}, vocab),
                       doctest::Contains("token not in vocab"), data_error);
}

TEST_CASE("vocab file roundtrip") {
  testsupport::TmpDir tmp;
  const auto vocab = Vocab::build(corpus_of({"hello world hello"}), 40);
  vocab.save(tmp.file("vocab.txt"));
  const auto loaded = Vocab::load(tmp.file("vocab.txt"));
  REQUIRE(loaded.size() == vocab.size());
  for (int i = 0; i < vocab.size(); ++i) CHECK(loaded.token(i) == vocab.token(i));
}

TEST_CASE("build_model_input: worked example layout") {
  const auto vocab = vocab_from({"hi", "how", "are", "you", "fine"});
  const auto input = build_model_input({{"hi"}, {"how", "are", "you"}}, {"fine"}, vocab, 12, 4);
  const int hi = *vocab.id_of("hi"), how = *vocab.id_of("how"), are = *vocab.id_of("are"),
            you = *vocab.id_of("you"), fine = *vocab.id_of("fine");
  CHECK(input.input_ids == std::vector<int>{2, hi, 5, how, are, you, 5, 3, fine, 3, 0, 0, 0, 0,
                                            0, 0});
  CHECK(input.segment_ids ==
        std::vector<int>{0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0});
  CHECK(input.attention_mask ==
        std::vector<int>{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  CHECK(input.cls_position == 0);
}

TEST_CASE("build_model_input: response truncated from the end") {
  const auto vocab = vocab_from({"a", "b", "c", "d", "e", "f", "g"});
  const std::vector<std::string> response{"a", "b", "c", "d", "e", "f", "g"};  // max + 3
  const auto input = build_model_input({{"a"}}, response, vocab, 12, 4);
  std::vector<int> resp_ids;
  for (std::size_t i = 0; i < input.input_ids.size(); ++i)
    if (input.segment_ids[i] == 1 && input.input_ids[i] != Vocab::kSep)
      resp_ids.push_back(input.input_ids[i]);
  CHECK(resp_ids == encode_ids({"a", "b", "c", "d"}, vocab));
}

TEST_CASE("build_model_input: oldest turns dropped first, newest kept") {
  const auto vocab = vocab_from({"w"});
  std::vector<std::vector<std::string>> context(5, std::vector<std::string>(100, "w"));
  context[4].push_back("w");  // newest turn distinguishable: 101 tokens
  const auto input = build_model_input(context, {"w"}, vocab, 280, 40);
  // 2 whole turns of 101/102 tokens fit in 277; three oldest dropped
  int eots = 0;
  for (std::size_t i = 0; i < input.input_ids.size() && input.segment_ids[i] == 0; ++i)
    if (input.input_ids[i] == Vocab::kEot) ++eots;
  CHECK(eots == 2);
}

TEST_CASE("build_model_input: single over-long turn keeps most recent tokens") {
  const auto vocab = vocab_from({"x", "y"});
  std::vector<std::string> longturn(50, "x");
  longturn.push_back("y");  // most recent token
  const auto input = build_model_input({longturn}, {"x"}, vocab, 12, 4);
  // context block is [CLS] + 8 content + [SEP] = 10 <= 11
  CHECK(input.input_ids[0] == Vocab::kCls);
  // the [EOT] and the final 'y' survive the front trim
  bool saw_y = false;
  for (std::size_t i = 0; i < input.input_ids.size() && input.segment_ids[i] == 0; ++i)
    saw_y = saw_y || input.input_ids[i] == *vocab.id_of("y");
  CHECK(saw_y);
}

TEST_CASE("build_model_input: empty input is rejected") {
  const auto vocab = vocab_from({});
  CHECK_THROWS_WITH_AS(build_model_input({}, {}, vocab, 12, 4),
                       doctest::Contains("empty input"), data_error);
}

TEST_CASE("build_model_input: without [EOT] markers") {
  const auto vocab = vocab_from({"hi", "fine"});
  const auto input =
      build_model_input({{"hi"}}, {"fine"}, vocab, 8, 4, /*with_eot=*/false);
  for (int id : input.input_ids) CHECK(id != Vocab::kEot);
}

TEST_CASE("build_model_input: invariants hold over random corpora") {
  Rng rng(17);
  const auto dialogs = corpus_of({"alpha beta gamma delta", "epsilon zeta eta theta",
                                  "iota kappa lambda mu", "nu xi omicron pi"});
  const auto vocab = Vocab::build(dialogs, 80);
  const std::vector<std::string> words{"alpha", "beta",  "gamma", "delta", "epsilon",
                                       "zeta",  "eta",   "theta", "iota",  "kappa",
                                       "lambda", "mu",   "nu",    "xi",    "omicron",
                                       "pi",    "zzz",   "qqq"};
  for (int trial = 0; trial < 300; ++trial) {
    const int turns = static_cast<int>(rng.next_int(1, 6));
    std::vector<std::vector<std::string>> context(turns);
    for (auto& turn : context) {
      const int len = static_cast<int>(rng.next_int(1, 8));
      for (int i = 0; i < len; ++i)
        turn.push_back(words[rng.next_int(0, words.size() - 1)]);
    }
    std::vector<std::string> response;
    const int rlen = static_cast<int>(rng.next_int(0, 8));
    for (int i = 0; i < rlen; ++i)
      response.push_back(words[rng.next_int(0, words.size() - 1)]);
    const int max_ctx = static_cast<int>(rng.next_int(4, 24));
    const int max_resp = static_cast<int>(rng.next_int(1, 8));
    const auto input = build_model_input(context, response, vocab, max_ctx, max_resp);
    CHECK_NOTHROW(validate_model_input(input, max_ctx + max_resp));
    // budget split respected
    int ctx_block = 0, resp_tokens = 0;
    for (std::size_t i = 0; i < input.input_ids.size(); ++i) {
      if (input.attention_mask[i] == 0) break;
      if (input.segment_ids[i] == 0) ++ctx_block;
      else if (input.input_ids[i] != Vocab::kSep) ++resp_tokens;
    }
    CHECK(ctx_block <= max_ctx);
    CHECK(resp_tokens <= max_resp);
  }
}
