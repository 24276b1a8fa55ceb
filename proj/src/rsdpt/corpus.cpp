#include "rsdpt/corpus.hpp"

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "rsdpt/common.hpp"
#include "rsdpt/rng.hpp"

namespace rsdpt {
namespace {

using nlohmann::json;

struct LineSource {
  std::ifstream file;
  std::istream* in = nullptr;

  explicit LineSource(const std::string& path) {
    if (path == "-") {
      in = &std::cin;
      return;
    }
    file.open(path);
    if (!file.is_open()) throw data_error("cannot open file: " + path);
    in = &file;
  }

  bool next(std::string& line) { return static_cast<bool>(std::getline(*in, line)); }
};

json parse_line(const std::string& line, std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw data_error("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
  }
}

std::string field_error(std::size_t line_no, const std::string& what) {
  return "line " + std::to_string(line_no) + ": " + what;
}

std::string trim(const std::string& s) {
  const char* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string collapse_spaces(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = false;
  for (char c : s) {
    if (c == ' ' || c == '\t') {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::unique_ptr<std::ofstream> open_out(const std::string& path) {
  auto out = std::make_unique<std::ofstream>(path);
  if (!out->is_open()) throw data_error("cannot write file: " + path);
  return out;
}

}  // namespace

std::vector<Dialog> load_dialogs(const std::string& path) {
  LineSource src(path);
  std::vector<Dialog> dialogs;
  std::string line;
  std::size_t line_no = 0;
  while (src.next(line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j = parse_line(line, line_no);
    if (!j.is_object() || !j.contains("id") || !j.contains("utterances"))
      throw data_error(field_error(line_no, "expected object with \"id\" and \"utterances\""));
    Dialog d;
    try {
      d.id = j.at("id").get<std::string>();
      d.utterances = j.at("utterances").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw data_error(field_error(line_no, e.what()));
    }
    if (d.utterances.empty()) throw data_error(field_error(line_no, "utterance list is empty"));
    for (const auto& u : d.utterances)
      if (u.empty()) throw data_error(field_error(line_no, "empty utterance string"));
    dialogs.push_back(std::move(d));
  }
  return dialogs;
}

std::vector<EvalInstance> load_eval(const std::string& path) {
  LineSource src(path);
  std::vector<EvalInstance> instances;
  std::string line;
  std::size_t line_no = 0;
  while (src.next(line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j = parse_line(line, line_no);
    EvalInstance inst;
    try {
      inst.context = j.at("context").get<std::vector<std::string>>();
      inst.candidates = j.at("candidates").get<std::vector<std::string>>();
      inst.ground_truth_index = j.at("ground_truth_index").get<int>();
    } catch (const json::exception& e) {
      throw data_error(field_error(line_no, e.what()));
    }
    if (inst.candidates.size() < 2)
      throw data_error(field_error(line_no, "need at least 2 candidates"));
    if (inst.context.empty()) throw data_error(field_error(line_no, "empty context"));
    if (inst.ground_truth_index < 0 ||
        inst.ground_truth_index >= static_cast<int>(inst.candidates.size()))
      throw data_error(field_error(line_no, "ground_truth_index out of range"));
    instances.push_back(std::move(inst));
  }
  return instances;
}

std::vector<FineTuneExample> load_finetune_jsonl(const std::string& path) {
  LineSource src(path);
  std::vector<FineTuneExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (src.next(line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j = parse_line(line, line_no);
    FineTuneExample ex;
    try {
      ex.context = j.at("context").get<std::vector<std::string>>();
      ex.response = j.at("response").get<std::string>();
      ex.label = j.at("label").get<int>();
    } catch (const json::exception& e) {
      throw data_error(field_error(line_no, e.what()));
    }
    if (ex.label != 0 && ex.label != 1)
      throw data_error(field_error(line_no, "label must be 0 or 1"));
    if (ex.context.empty()) throw data_error(field_error(line_no, "empty context"));
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<FineTuneExample> import_ubuntu_tsv(const std::string& path) {
  LineSource src(path);
  std::vector<FineTuneExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (src.next(line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) {
        cols.push_back(line.substr(start));
        break;
      }
      cols.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (cols.size() != 3)
      throw data_error(field_error(line_no, "expected 3 tab-separated columns, got " +
                                                std::to_string(cols.size())));
    FineTuneExample ex;
    // Split turns on __eot__, flatten __eou__ to a space inside each turn.
    const std::string marker = "__eot__";
    std::string ctx = cols[0];
    std::size_t pos = 0;
    while (pos <= ctx.size()) {
      const auto hit = ctx.find(marker, pos);
      std::string turn =
          hit == std::string::npos ? ctx.substr(pos) : ctx.substr(pos, hit - pos);
      turn = collapse_spaces(trim(replace_all(turn, "__eou__", " ")));
      if (!turn.empty()) ex.context.push_back(turn);
      if (hit == std::string::npos) break;
      pos = hit + marker.size();
    }
    if (ex.context.empty())
      throw data_error(field_error(line_no, "context has no utterances"));
    ex.response = collapse_spaces(trim(replace_all(cols[1], "__eou__", " ")));
    const std::string label = trim(cols[2]);
    if (label == "0") {
      ex.label = 0;
    } else if (label == "1") {
      ex.label = 1;
    } else {
      throw data_error(field_error(line_no, "label must be \"0\" or \"1\", got \"" + label + "\""));
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

void save_dialogs(const std::vector<Dialog>& dialogs, const std::string& path) {
  auto out = open_out(path);
  for (const auto& d : dialogs) {
    json j{{"id", d.id}, {"utterances", d.utterances}};
    *out << j.dump() << '\n';
  }
}

void save_eval(const std::vector<EvalInstance>& instances, const std::string& path) {
  auto out = open_out(path);
  for (const auto& inst : instances) {
    json j{{"context", inst.context},
           {"candidates", inst.candidates},
           {"ground_truth_index", inst.ground_truth_index}};
    *out << j.dump() << '\n';
  }
}

void save_finetune_jsonl(const std::vector<FineTuneExample>& examples, const std::string& path) {
  auto out = open_out(path);
  for (const auto& ex : examples) {
    json j{{"context", ex.context}, {"response", ex.response}, {"label", ex.label}};
    *out << j.dump() << '\n';
  }
}

std::vector<FineTuneExample> finetune_from_eval(const std::vector<EvalInstance>& instances,
                                                NegativeChoice choice,
                                                std::uint64_t seed) {
  std::vector<FineTuneExample> out;
  out.reserve(instances.size() * 2);
  Rng base(seed);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    out.push_back({inst.context, inst.candidates[inst.ground_truth_index], 1});
    std::vector<int> negatives;
    for (int c = 0; c < static_cast<int>(inst.candidates.size()); ++c)
      if (c != inst.ground_truth_index) negatives.push_back(c);
    int pick = negatives.front();
    if (choice == NegativeChoice::kSeededRandom) {
      Rng rng = base.derive(i);
      pick = negatives[rng.next_int(0, static_cast<std::int64_t>(negatives.size()) - 1)];
    }
    out.push_back({inst.context, inst.candidates[pick], 0});
  }
  return out;
}

}  // namespace rsdpt
