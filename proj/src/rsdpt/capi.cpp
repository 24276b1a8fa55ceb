#include "rsdpt.h"

#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "rsdpt/common.hpp"
#include "rsdpt/corpus.hpp"
#include "rsdpt/eval.hpp"
#include "rsdpt/pretrain.hpp"
#include "rsdpt/trainer.hpp"
#include "rsdpt/vocab.hpp"

using nlohmann::json;

struct rsdpt_vocab {
  rsdpt::Vocab impl;
};

struct rsdpt_model {
  rsdpt::Parameters<float> params;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename Fn>
rsdpt_status guarded(Fn&& fn) {
  try {
    fn();
    return RSDPT_OK;
  } catch (const rsdpt::usage_error& e) {
    set_error(e.what());
    return RSDPT_ERR_USAGE;
  } catch (const rsdpt::data_error& e) {
    set_error(e.what());
    return RSDPT_ERR_DATA;
  } catch (const std::exception& e) {
    set_error(e.what());
    return RSDPT_ERR_RUNTIME;
  }
}

json parse_options(const char* options_json, std::initializer_list<const char*> allowed) {
  if (options_json == nullptr) throw rsdpt::usage_error("options must not be null");
  json j;
  try {
    j = json::parse(options_json);
  } catch (const json::exception& e) {
    throw rsdpt::usage_error(std::string("invalid options JSON: ") + e.what());
  }
  if (!j.is_object()) throw rsdpt::usage_error("options must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw rsdpt::usage_error("unknown option: " + key);
  }
  return j;
}

std::string require_string(const json& j, const char* key) {
  if (!j.contains(key)) throw rsdpt::usage_error(std::string("missing option: ") + key);
  return j.at(key).get<std::string>();
}

rsdpt::TrainConfig train_config_from(const json& j) {
  return j.contains("train_config") ? rsdpt::TrainConfig::from_json(j.at("train_config"))
                                    : rsdpt::TrainConfig{};
}

rsdpt::EncoderConfig model_config_from(const json& j, int vocab_size, int max_positions) {
  rsdpt::EncoderConfig cfg;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    cfg.num_layers = m.value("num_layers", cfg.num_layers);
    cfg.hidden_size = m.value("hidden_size", cfg.hidden_size);
    cfg.num_heads = m.value("num_heads", cfg.num_heads);
    cfg.ff_size = m.value("ff_size", cfg.ff_size);
    cfg.dropout_rate = m.value("dropout_rate", cfg.dropout_rate);
    cfg.layer_norm_eps = m.value("layer_norm_eps", cfg.layer_norm_eps);
  }
  cfg.vocab_size = vocab_size;
  cfg.max_positions = max_positions;
  cfg.validate();
  return cfg;
}

std::vector<rsdpt::FineTuneExample> load_train_data(const json& j) {
  const std::string path = require_string(j, "train");
  const std::string format = j.value("train_format", std::string("triples"));
  if (format == "triples") return rsdpt::load_finetune_jsonl(path);
  if (format == "ubuntu-tsv") return rsdpt::import_ubuntu_tsv(path);
  if (format == "eval") {
    const std::string choice = j.value("neg_choice", std::string("random"));
    if (choice != "random" && choice != "first")
      throw rsdpt::usage_error("neg_choice must be random or first");
    const auto instances = rsdpt::load_eval(path);
    return rsdpt::finetune_from_eval(instances,
                                     choice == "first" ? rsdpt::NegativeChoice::kFirst
                                                       : rsdpt::NegativeChoice::kSeededRandom,
                                     j.value("seed", 13ULL));
  }
  throw rsdpt::usage_error("train_format must be triples, ubuntu-tsv, or eval");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* rsdpt_version(void) { return "0.1.0"; }

const char* rsdpt_last_error(void) { return g_last_error.c_str(); }

rsdpt_status rsdpt_build_vocab(const char* dialogs_jsonl, int target_size,
                               const char* out_path) {
  return guarded([&] {
    if (dialogs_jsonl == nullptr || out_path == nullptr)
      throw rsdpt::usage_error("paths must not be null");
    const auto dialogs = rsdpt::load_dialogs(dialogs_jsonl);
    const auto vocab = rsdpt::Vocab::build(dialogs, target_size);
    vocab.save(out_path);
  });
}

rsdpt_vocab* rsdpt_vocab_open(const char* vocab_path) {
  rsdpt_vocab* handle = nullptr;
  guarded([&] {
    if (vocab_path == nullptr) throw rsdpt::usage_error("vocab_path must not be null");
    handle = new rsdpt_vocab{rsdpt::Vocab::load(vocab_path)};
  });
  return handle;
}

void rsdpt_vocab_free(rsdpt_vocab* vocab) { delete vocab; }

int rsdpt_vocab_size(const rsdpt_vocab* vocab) {
  return vocab == nullptr ? 0 : vocab->impl.size();
}

int rsdpt_vocab_token_to_id(const rsdpt_vocab* vocab, const char* token) {
  if (vocab == nullptr || token == nullptr) return -1;
  const auto id = vocab->impl.id_of(token);
  return id ? *id : -1;
}

rsdpt_status rsdpt_tokenize(const rsdpt_vocab* vocab, const char* text, int** out_ids,
                            int* out_len) {
  return guarded([&] {
    if (vocab == nullptr || text == nullptr || out_ids == nullptr || out_len == nullptr)
      throw rsdpt::usage_error("null argument");
    const auto tokens = rsdpt::tokenize(text, vocab->impl);
    const auto ids = rsdpt::encode_ids(tokens, vocab->impl);
    int* buf = static_cast<int*>(std::malloc(sizeof(int) * std::max<std::size_t>(1, ids.size())));
    if (buf == nullptr) throw std::runtime_error("out of memory");
    std::copy(ids.begin(), ids.end(), buf);
    *out_ids = buf;
    *out_len = static_cast<int>(ids.size());
  });
}

void rsdpt_ids_free(int* ids) { std::free(ids); }

rsdpt_model* rsdpt_model_open(const char* checkpoint_dir) {
  rsdpt_model* handle = nullptr;
  guarded([&] {
    if (checkpoint_dir == nullptr) throw rsdpt::usage_error("checkpoint_dir must not be null");
    handle = new rsdpt_model{rsdpt::Parameters<float>::load(checkpoint_dir)};
  });
  return handle;
}

void rsdpt_model_free(rsdpt_model* model) { delete model; }

int rsdpt_model_hidden_size(const rsdpt_model* model) {
  return model == nullptr ? 0 : model->params.config.hidden_size;
}

int rsdpt_model_num_layers(const rsdpt_model* model) {
  return model == nullptr ? 0 : model->params.config.num_layers;
}

rsdpt_status rsdpt_score(const rsdpt_model* model, const rsdpt_vocab* vocab,
                         const char* const* context, int num_context, const char* response,
                         int max_context_len, int max_response_len, int with_eot,
                         double* out_score) {
  return guarded([&] {
    if (model == nullptr || vocab == nullptr || context == nullptr || response == nullptr ||
        out_score == nullptr)
      throw rsdpt::usage_error("null argument");
    if (num_context < 1) throw rsdpt::usage_error("context must have at least one utterance");
    std::vector<std::vector<std::string>> context_tokens;
    context_tokens.reserve(num_context);
    for (int i = 0; i < num_context; ++i) {
      if (context[i] == nullptr) throw rsdpt::usage_error("null context utterance");
      context_tokens.push_back(rsdpt::tokenize(context[i], vocab->impl));
    }
    const auto input = rsdpt::build_model_input(context_tokens,
                                                rsdpt::tokenize(response, vocab->impl),
                                                vocab->impl, max_context_len, max_response_len,
                                                with_eot != 0);
    *out_score = static_cast<double>(
        rsdpt::rs_score(rsdpt::to_encoded(input), model->params));
  });
}

rsdpt_status rsdpt_prepare_pretrain(const char* options_json) {
  return guarded([&] {
    const json j = parse_options(options_json, {"dialogs", "vocab", "out", "count", "seq_len",
                                                "mask_rate", "seed", "with_eot"});
    const auto dialogs = rsdpt::load_dialogs(require_string(j, "dialogs"));
    const auto vocab = rsdpt::Vocab::load(require_string(j, "vocab"));
    const auto out = require_string(j, "out");
    const auto examples = rsdpt::generate_pretrain_set(
        dialogs, vocab, j.value("count", 1000LL), j.value("seq_len", 320),
        j.value("seed", 13ULL), j.value("mask_rate", 0.15), j.value("with_eot", true));
    rsdpt::save_pretrain_jsonl(examples, out);
  });
}

rsdpt_status rsdpt_post_train(const char* options_json) {
  return guarded([&] {
    const json j = parse_options(
        options_json, {"dialogs", "pretrain", "vocab", "out", "log", "init", "resume",
                       "objective", "with_eot", "mask_rate", "model", "train_config",
                       "log_every", "ckpt_every"});
    const auto vocab = rsdpt::Vocab::load(require_string(j, "vocab"));
    rsdpt::TrainConfig cfg = train_config_from(j);
    if (cfg.max_steps <= 0) throw rsdpt::usage_error("post-training requires max_steps > 0");

    rsdpt::PostTrainOptions opts;
    opts.out_dir = require_string(j, "out");
    opts.log_path = j.value("log", std::string());
    opts.objective = rsdpt::objective_from_string(j.value("objective", std::string("mlm+nsp")));
    opts.log_every = j.value("log_every", 50LL);
    opts.ckpt_every = j.value("ckpt_every", 0LL);
    opts.resume_dir = j.value("resume", std::string());

    rsdpt::Parameters<float> params = [&] {
      if (!opts.resume_dir.empty()) return rsdpt::Parameters<float>::load(opts.resume_dir);
      if (j.contains("init")) return rsdpt::Parameters<float>::load(j.at("init").get<std::string>());
      rsdpt::Rng rng(cfg.seed);
      return rsdpt::Parameters<float>::init(
          model_config_from(j, vocab.size(), cfg.seq_len()), rng);
    }();
    if (params.config.vocab_size != vocab.size())
      throw rsdpt::data_error("checkpoint vocab size does not match vocab file");

    rsdpt::PretrainSource source = [&] {
      if (j.contains("pretrain")) {
        auto examples = std::make_shared<std::vector<rsdpt::PretrainExample>>(
            rsdpt::load_pretrain_jsonl(j.at("pretrain").get<std::string>()));
        for (const auto& ex : *examples)
          rsdpt::validate_pretrain_example(ex, static_cast<int>(ex.input_ids.size()),
                                           j.value("mask_rate", 0.15));
        return rsdpt::source_from_examples(std::move(examples));
      }
      if (!j.contains("dialogs"))
        throw rsdpt::usage_error("post-training needs either dialogs or pretrain input");
      auto gen = std::make_shared<rsdpt::PretrainGenerator>(
          rsdpt::load_dialogs(j.at("dialogs").get<std::string>()), vocab, cfg.seq_len(),
          cfg.seed, j.value("mask_rate", 0.15), j.value("with_eot", true));
      return rsdpt::source_from_generator(std::move(gen));
    }();

    rsdpt::post_train(source, std::move(params), cfg, opts);
  });
}

rsdpt_status rsdpt_fine_tune(const char* options_json) {
  return guarded([&] {
    const json j = parse_options(
        options_json, {"train", "train_format", "neg_choice", "valid", "vocab", "init", "out",
                       "log", "with_eot", "threads", "model", "train_config", "log_every",
                       "seed"});
    const auto vocab = rsdpt::Vocab::load(require_string(j, "vocab"));
    rsdpt::TrainConfig cfg = train_config_from(j);

    const auto train = load_train_data(j);
    std::vector<rsdpt::EvalInstance> valid;
    if (j.contains("valid")) valid = rsdpt::load_eval(j.at("valid").get<std::string>());

    rsdpt::FineTuneOptions opts;
    opts.out_dir = require_string(j, "out");
    opts.log_path = j.value("log", std::string());
    opts.with_eot = j.value("with_eot", true);
    opts.threads = j.value("threads", 1);
    opts.log_every = j.value("log_every", 20LL);

    rsdpt::Parameters<float> params = [&] {
      if (j.contains("init")) return rsdpt::Parameters<float>::load(j.at("init").get<std::string>());
      rsdpt::Rng rng(cfg.seed);
      return rsdpt::Parameters<float>::init(
          model_config_from(j, vocab.size(), cfg.seq_len()), rng);
    }();
    if (params.config.vocab_size != vocab.size())
      throw rsdpt::data_error("checkpoint vocab size does not match vocab file");

    rsdpt::fine_tune(train, valid, vocab, std::move(params), cfg, opts);
  });
}

rsdpt_status rsdpt_evaluate(const char* options_json, char** out_report_json) {
  return guarded([&] {
    const json j = parse_options(options_json,
                                 {"model", "vocab", "eval", "ks", "out", "dump", "threads",
                                  "with_eot", "max_context_len", "max_response_len"});
    const auto vocab = rsdpt::Vocab::load(require_string(j, "vocab"));
    const auto params = rsdpt::Parameters<float>::load(require_string(j, "model"));
    const auto instances = rsdpt::load_eval(require_string(j, "eval"));
    const auto ks = j.value("ks", std::vector<int>{1, 2, 5});
    const int max_ctx = j.value("max_context_len", 280);
    const int max_resp = j.value("max_response_len", 40);
    const bool with_eot = j.value("with_eot", true);
    const int threads = j.value("threads", 1);

    if (params.config.vocab_size != vocab.size())
      throw rsdpt::data_error("checkpoint vocab size does not match vocab file");
    const auto records =
        rsdpt::score_all(params, vocab, instances, max_ctx, max_resp, with_eot, threads);
    const auto metrics = rsdpt::compute_metrics(records, ks);
    const std::string report = rsdpt::metrics_to_json(metrics).dump();

    if (j.contains("out")) {
      std::ofstream out(j.at("out").get<std::string>());
      if (!out.is_open()) throw rsdpt::data_error("cannot write report file");
      out << report << '\n';
    }
    if (j.contains("dump"))
      rsdpt::write_score_dump(records, j.at("dump").get<std::string>());
    if (out_report_json != nullptr) *out_report_json = dup_string(report);
  });
}

rsdpt_status rsdpt_predict(const char* options_json) {
  return guarded([&] {
    const json j = parse_options(options_json,
                                 {"model", "vocab", "eval", "out", "threads", "with_eot",
                                  "max_context_len", "max_response_len"});
    const auto vocab = rsdpt::Vocab::load(require_string(j, "vocab"));
    const auto params = rsdpt::Parameters<float>::load(require_string(j, "model"));
    if (params.config.vocab_size != vocab.size())
      throw rsdpt::data_error("checkpoint vocab size does not match vocab file");
    const auto instances = rsdpt::load_eval(require_string(j, "eval"));
    const auto records = rsdpt::score_all(params, vocab, instances,
                                          j.value("max_context_len", 280),
                                          j.value("max_response_len", 40),
                                          j.value("with_eot", true), j.value("threads", 1));
    rsdpt::write_score_dump(records, require_string(j, "out"));
  });
}

void rsdpt_string_free(char* s) { std::free(s); }

}  // extern "C"
