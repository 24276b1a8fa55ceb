// Command-line front end; all work happens behind the C API in librsdpt.
#include <rsdpt.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

using nlohmann::json;

namespace {

int finish(rsdpt_status status) {
  if (status != RSDPT_OK) std::fprintf(stderr, "[error] %s\n", rsdpt_last_error());
  return static_cast<int>(status);
}

// Training hyperparameters shared by post-train and fine-tune. Flag defaults
// mirror the library defaults; a --config JSON file can set any field and
// explicitly passed flags win over it.
struct TrainFlags {
  int batch_size = 32;
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  std::int64_t max_steps = 0;
  int max_context_len = 280;
  int max_response_len = 40;
  int vft_layers = -1;
  int negatives = 1;
  int epochs = 3;
  double clip_norm = 1.0;
  bool freeze_embeddings = false;
  std::uint64_t seed = 13;
  std::string config_path;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file mirroring the training fields");
    cmd->add_option("--batch-size", batch_size, "examples per optimizer step")
        ->capture_default_str();
    cmd->add_option("--lr", learning_rate, "peak learning rate")->capture_default_str();
    cmd->add_option("--beta1", beta1, "Adam beta1")->capture_default_str();
    cmd->add_option("--beta2", beta2, "Adam beta2")->capture_default_str();
    cmd->add_option("--epsilon", epsilon, "Adam epsilon")->capture_default_str();
    cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay")
        ->capture_default_str();
    cmd->add_option("--warmup-fraction", warmup_fraction,
                    "fraction of max steps spent in linear warmup")
        ->capture_default_str();
    cmd->add_option("--max-steps", max_steps,
                    "total optimizer steps (0 for fine-tune: derived from epochs)")
        ->capture_default_str();
    cmd->add_option("--max-context-len", max_context_len, "token budget for the context block")
        ->capture_default_str();
    cmd->add_option("--max-response-len", max_response_len, "token budget for the response")
        ->capture_default_str();
    cmd->add_option("--clip-norm", clip_norm, "global gradient-norm clip (0 disables)")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "random seed; all sampling derives from it")
        ->capture_default_str();
  }

  void add_finetune_to(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "fine-tuning epochs")->capture_default_str();
    cmd->add_option("--vft-layers", vft_layers,
                    "tune only the top T encoder layers (-1: all layers)")
        ->capture_default_str();
    cmd->add_option("--negatives", negatives,
                    "negatives per positive; >1 resamples them every epoch")
        ->capture_default_str();
    cmd->add_flag("--freeze-embeddings", freeze_embeddings,
                  "freeze embedding tables as well when using --vft-layers");
  }

  json to_train_config(const CLI::App* cmd) const {
    json cfg = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in.is_open()) {
        throw CLI::ValidationError("--config", "cannot open " + config_path);
      }
      cfg = json::parse(in, nullptr, /*allow_exceptions=*/true);
    }
    auto set = [&](const char* flag, const char* key, const json& value) {
      if (cmd->count(flag) > 0 || !cfg.contains(key)) cfg[key] = value;
    };
    set("--batch-size", "batch_size", batch_size);
    set("--lr", "learning_rate", learning_rate);
    if (cmd->count("--beta1") > 0 || cmd->count("--beta2") > 0 || !cfg.contains("betas"))
      cfg["betas"] = {beta1, beta2};
    set("--epsilon", "epsilon", epsilon);
    set("--weight-decay", "weight_decay", weight_decay);
    set("--warmup-fraction", "warmup_fraction", warmup_fraction);
    set("--max-steps", "max_steps", max_steps);
    set("--max-context-len", "max_context_len", max_context_len);
    set("--max-response-len", "max_response_len", max_response_len);
    set("--clip-norm", "clip_norm", clip_norm);
    set("--seed", "seed", seed);
    if (cmd->get_option_no_throw("--epochs") != nullptr) {
      set("--epochs", "epochs", epochs);
      set("--vft-layers", "vft_layers", vft_layers);
      set("--negatives", "negatives_per_positive", negatives);
      set("--freeze-embeddings", "freeze_embeddings", freeze_embeddings);
    }
    return cfg;
  }
};

struct ModelFlags {
  int layers = 4;
  int hidden = 128;
  int heads = 4;
  int ff = 512;
  double dropout = 0.1;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--layers", layers, "encoder layers (fresh models)")->capture_default_str();
    cmd->add_option("--hidden", hidden, "hidden size (fresh models)")->capture_default_str();
    cmd->add_option("--heads", heads, "attention heads (fresh models)")->capture_default_str();
    cmd->add_option("--ff", ff, "feed-forward size (fresh models)")->capture_default_str();
    cmd->add_option("--dropout", dropout, "dropout rate (fresh models)")->capture_default_str();
  }

  json to_json() const {
    return {{"num_layers", layers},
            {"hidden_size", hidden},
            {"num_heads", heads},
            {"ff_size", ff},
            {"dropout_rate", dropout}};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rsdpt: domain post-training and fine-tuning of a small transformer encoder "
               "for multi-turn response selection"};
  app.require_subcommand(1);

  // build-vocab
  auto* build_vocab = app.add_subcommand("build-vocab", "build a subword vocabulary from dialogs");
  std::string bv_input, bv_out;
  int bv_size = 8000;
  build_vocab->add_option("--input", bv_input, "dialogs JSONL ('-' for stdin)")->required();
  build_vocab->add_option("--size", bv_size, "target vocabulary size")->capture_default_str();
  build_vocab->add_option("--out", bv_out, "output vocab file")->required();

  // prepare-pretrain
  auto* prepare = app.add_subcommand("prepare-pretrain", "generate MLM+NSP examples from dialogs");
  std::string pp_dialogs, pp_vocab, pp_out;
  std::int64_t pp_count = 10000;
  int pp_seq_len = 320;
  double pp_mask_rate = 0.15;
  std::uint64_t pp_seed = 13;
  bool pp_no_eot = false;
  prepare->add_option("--dialogs", pp_dialogs, "dialogs JSONL ('-' for stdin)")->required();
  prepare->add_option("--vocab", pp_vocab, "vocab file")->required();
  prepare->add_option("--out", pp_out, "output JSONL")->required();
  prepare->add_option("--count", pp_count, "number of examples")->capture_default_str();
  prepare->add_option("--seq-len", pp_seq_len, "total sequence length q")->capture_default_str();
  prepare->add_option("--mask-rate", pp_mask_rate, "MLM masking rate")->capture_default_str();
  prepare->add_option("--seed", pp_seed, "random seed")->capture_default_str();
  prepare->add_flag("--no-eot", pp_no_eot, "omit [EOT] turn markers (ablation)");

  // post-train
  auto* post = app.add_subcommand("post-train", "run domain post-training (MLM+NSP)");
  std::string pt_dialogs, pt_pretrain, pt_vocab, pt_out, pt_log, pt_init, pt_resume;
  std::string pt_objective = "mlm+nsp";
  double pt_mask_rate = 0.15;
  bool pt_no_eot = false;
  std::int64_t pt_log_every = 50, pt_ckpt_every = 0;
  TrainFlags pt_train;
  ModelFlags pt_model;
  post->add_option("--dialogs", pt_dialogs, "dialogs JSONL; examples generated on the fly");
  post->add_option("--pretrain", pt_pretrain, "pre-generated examples JSONL");
  post->add_option("--vocab", pt_vocab, "vocab file")->required();
  post->add_option("--out", pt_out, "output checkpoint directory")->required();
  post->add_option("--log", pt_log, "training log JSONL");
  post->add_option("--init", pt_init, "initial checkpoint (continue training)");
  post->add_option("--resume", pt_resume, "checkpoint to resume, restoring the optimizer");
  post->add_option("--objective", pt_objective, "loss terms: mlm, nsp, or mlm+nsp")
      ->capture_default_str();
  post->add_option("--mask-rate", pt_mask_rate, "MLM masking rate")->capture_default_str();
  post->add_flag("--no-eot", pt_no_eot, "omit [EOT] turn markers (ablation)");
  post->add_option("--log-every", pt_log_every, "steps between log records")
      ->capture_default_str();
  post->add_option("--ckpt-every", pt_ckpt_every, "steps between periodic checkpoints (0: none)")
      ->capture_default_str();
  pt_train.add_to(post);
  pt_model.add_to(post);

  // fine-tune
  auto* ft = app.add_subcommand("fine-tune", "fine-tune a model for response selection");
  std::string ft_train, ft_format = "triples", ft_neg_choice = "random";
  std::string ft_valid, ft_vocab, ft_init, ft_out, ft_log;
  bool ft_no_eot = false;
  int ft_threads = 1;
  std::int64_t ft_log_every = 20;
  TrainFlags ft_cfg;
  ModelFlags ft_model;
  ft->add_option("--train", ft_train, "training data ('-' for stdin)")->required();
  ft->add_option("--train-format", ft_format, "triples, ubuntu-tsv, or eval")
      ->capture_default_str();
  ft->add_option("--neg-choice", ft_neg_choice,
                 "negative pick when reducing eval-format data: random or first")
      ->capture_default_str();
  ft->add_option("--valid", ft_valid, "validation instances JSONL (best MRR checkpoint kept)");
  ft->add_option("--vocab", ft_vocab, "vocab file")->required();
  ft->add_option("--init", ft_init, "initial checkpoint (omit to train from scratch)");
  ft->add_option("--out", ft_out, "output checkpoint directory")->required();
  ft->add_option("--log", ft_log, "training log JSONL");
  ft->add_flag("--no-eot", ft_no_eot, "omit [EOT] turn markers (ablation)");
  ft->add_option("--threads", ft_threads, "validation scoring threads")->capture_default_str();
  ft->add_option("--log-every", ft_log_every, "steps between log records")
      ->capture_default_str();
  ft_cfg.add_to(ft);
  ft_cfg.add_finetune_to(ft);
  ft_model.add_to(ft);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "compute R_n@k and MRR over an eval set");
  std::string ev_model, ev_vocab, ev_eval, ev_out, ev_dump;
  std::vector<int> ev_ks{1, 2, 5};
  int ev_threads = 1, ev_max_ctx = 280, ev_max_resp = 40;
  bool ev_no_eot = false;
  ev->add_option("--model", ev_model, "checkpoint directory")->required();
  ev->add_option("--vocab", ev_vocab, "vocab file")->required();
  ev->add_option("--eval", ev_eval, "eval instances JSONL ('-' for stdin)")->required();
  ev->add_option("--ks", ev_ks, "recall cutoffs")->capture_default_str()->delimiter(',');
  ev->add_option("--out", ev_out, "write the JSON report here");
  ev->add_option("--dump", ev_dump, "also dump per-instance scores JSONL");
  ev->add_option("--threads", ev_threads, "scoring threads")->capture_default_str();
  ev->add_option("--max-context-len", ev_max_ctx, "token budget for the context block")
      ->capture_default_str();
  ev->add_option("--max-response-len", ev_max_resp, "token budget for the response")
      ->capture_default_str();
  ev->add_flag("--no-eot", ev_no_eot, "omit [EOT] turn markers (ablation)");

  // predict
  auto* pr = app.add_subcommand("predict", "dump per-instance candidate scores");
  std::string pr_model, pr_vocab, pr_eval, pr_out;
  int pr_threads = 1, pr_max_ctx = 280, pr_max_resp = 40;
  bool pr_no_eot = false;
  pr->add_option("--model", pr_model, "checkpoint directory")->required();
  pr->add_option("--vocab", pr_vocab, "vocab file")->required();
  pr->add_option("--eval", pr_eval, "eval instances JSONL ('-' for stdin)")->required();
  pr->add_option("--out", pr_out, "output scores JSONL")->required();
  pr->add_option("--threads", pr_threads, "scoring threads")->capture_default_str();
  pr->add_option("--max-context-len", pr_max_ctx, "token budget for the context block")
      ->capture_default_str();
  pr->add_option("--max-response-len", pr_max_resp, "token budget for the response")
      ->capture_default_str();
  pr->add_flag("--no-eot", pr_no_eot, "omit [EOT] turn markers (ablation)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
      return app.exit(e);
    std::fprintf(stderr, "[error] %s\n", e.what());
    return static_cast<int>(RSDPT_ERR_USAGE);
  }

  try {
    if (build_vocab->parsed())
      return finish(rsdpt_build_vocab(bv_input.c_str(), bv_size, bv_out.c_str()));

    if (prepare->parsed()) {
      json opts{{"dialogs", pp_dialogs}, {"vocab", pp_vocab},     {"out", pp_out},
                {"count", pp_count},     {"seq_len", pp_seq_len}, {"mask_rate", pp_mask_rate},
                {"seed", pp_seed},       {"with_eot", !pp_no_eot}};
      return finish(rsdpt_prepare_pretrain(opts.dump().c_str()));
    }

    if (post->parsed()) {
      json opts{{"vocab", pt_vocab},           {"out", pt_out},
                {"objective", pt_objective},   {"with_eot", !pt_no_eot},
                {"mask_rate", pt_mask_rate},   {"log_every", pt_log_every},
                {"ckpt_every", pt_ckpt_every}, {"model", pt_model.to_json()},
                {"train_config", pt_train.to_train_config(post)}};
      if (!pt_dialogs.empty()) opts["dialogs"] = pt_dialogs;
      if (!pt_pretrain.empty()) opts["pretrain"] = pt_pretrain;
      if (!pt_log.empty()) opts["log"] = pt_log;
      if (!pt_init.empty()) opts["init"] = pt_init;
      if (!pt_resume.empty()) opts["resume"] = pt_resume;
      return finish(rsdpt_post_train(opts.dump().c_str()));
    }

    if (ft->parsed()) {
      json opts{{"train", ft_train},         {"train_format", ft_format},
                {"neg_choice", ft_neg_choice}, {"vocab", ft_vocab},
                {"out", ft_out},             {"with_eot", !ft_no_eot},
                {"threads", ft_threads},     {"log_every", ft_log_every},
                {"model", ft_model.to_json()},
                {"train_config", ft_cfg.to_train_config(ft)}};
      if (!ft_valid.empty()) opts["valid"] = ft_valid;
      if (!ft_init.empty()) opts["init"] = ft_init;
      if (!ft_log.empty()) opts["log"] = ft_log;
      opts["seed"] = ft_cfg.seed;
      return finish(rsdpt_fine_tune(opts.dump().c_str()));
    }

    if (ev->parsed()) {
      json opts{{"model", ev_model},        {"vocab", ev_vocab},
                {"eval", ev_eval},          {"ks", ev_ks},
                {"threads", ev_threads},    {"with_eot", !ev_no_eot},
                {"max_context_len", ev_max_ctx}, {"max_response_len", ev_max_resp}};
      if (!ev_out.empty()) opts["out"] = ev_out;
      if (!ev_dump.empty()) opts["dump"] = ev_dump;
      char* report = nullptr;
      const rsdpt_status status = rsdpt_evaluate(opts.dump().c_str(), &report);
      if (status == RSDPT_OK && report != nullptr) {
        std::printf("%s\n", report);
        rsdpt_string_free(report);
      }
      return finish(status);
    }

    if (pr->parsed()) {
      json opts{{"model", pr_model},        {"vocab", pr_vocab},
                {"eval", pr_eval},          {"out", pr_out},
                {"threads", pr_threads},    {"with_eot", !pr_no_eot},
                {"max_context_len", pr_max_ctx}, {"max_response_len", pr_max_resp}};
      return finish(rsdpt_predict(opts.dump().c_str()));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "[error] %s\n", e.what());
    return static_cast<int>(RSDPT_ERR_RUNTIME);
  }
  return 0;
}
