#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rsdpt {

// A raw multi-turn dialog: id plus ordered utterances u1..um (m >= 1, none empty).
struct Dialog {
  std::string id;
  std::vector<std::string> utterances;
};

// One labeled (context, response, y) triple for pointwise fine-tuning.
struct FineTuneExample {
  std::vector<std::string> context;
  std::string response;
  int label = 0;  // y in {0,1}
};

// One ranking instance: n candidates, exactly one ground truth.
struct EvalInstance {
  std::vector<std::string> context;
  std::vector<std::string> candidates;
  int ground_truth_index = 0;
};

// JSONL loaders; every path argument accepts "-" for standard input.
std::vector<Dialog> load_dialogs(const std::string& path);
std::vector<EvalInstance> load_eval(const std::string& path);
std::vector<FineTuneExample> load_finetune_jsonl(const std::string& path);

// Ubuntu V1 release format: context<TAB>response<TAB>label, with "__eot__"
// turn delimiters and "__eou__" intra-turn markers flattened to spaces.
std::vector<FineTuneExample> import_ubuntu_tsv(const std::string& path);

void save_dialogs(const std::vector<Dialog>& dialogs, const std::string& path);
void save_eval(const std::vector<EvalInstance>& instances, const std::string& path);
void save_finetune_jsonl(const std::vector<FineTuneExample>& examples, const std::string& path);

enum class NegativeChoice { kSeededRandom, kFirst };

// Reduce n-candidate instances to 1:1 training triples (one positive, one
// negative per instance). How the negative is picked is configurable; the
// default draws it with the given seed.
std::vector<FineTuneExample> finetune_from_eval(const std::vector<EvalInstance>& instances,
                                                NegativeChoice choice,
                                                std::uint64_t seed);

}  // namespace rsdpt
