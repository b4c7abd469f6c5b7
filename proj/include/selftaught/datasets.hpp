#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "selftaught/core.hpp"

namespace selftaught::datasets {

using nlohmann::json;

class FormatError : public Error {
 public:
  using Error::Error;
};

class SizeMismatch : public Error {
 public:
  using Error::Error;
};

class UnknownDemoId : public Error {
 public:
  using Error::Error;
};

enum class DatasetFormat { MmluCsv, BigBenchJson, JsonLines, EhrJson };

inline std::string to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::MmluCsv: return "mmlu-csv";
    case DatasetFormat::BigBenchJson: return "bigbench-json";
    case DatasetFormat::JsonLines: return "jsonl";
    case DatasetFormat::EhrJson: return "ehr-json";
  }
  return "unknown";
}

inline DatasetFormat dataset_format_from_string(std::string_view name) {
  if (name == "mmlu-csv") return DatasetFormat::MmluCsv;
  if (name == "bigbench-json") return DatasetFormat::BigBenchJson;
  if (name == "jsonl") return DatasetFormat::JsonLines;
  if (name == "ehr-json") return DatasetFormat::EhrJson;
  throw Error("unknown dataset format: " + std::string(name));
}

struct DatasetSpec {
  std::string name;
  TaskKind task_kind{TaskKind::MultipleChoice};
  DatasetFormat format{DatasetFormat::MmluCsv};
  std::string test_path;
  std::optional<std::string> train_path;
  std::optional<int> expected_size;  // test-split gate, fails loudly on mismatch
  std::string domain_tag;
};

// ---------------------------------------------------------------------------
// EHR records
// ---------------------------------------------------------------------------

enum class Severity { NO, MILD, MODERATE, SEVERE };

inline std::string to_string(Severity severity) {
  switch (severity) {
    case Severity::NO: return "NO";
    case Severity::MILD: return "MILD";
    case Severity::MODERATE: return "MODERATE";
    case Severity::SEVERE: return "SEVERE";
  }
  return "NO";
}

inline Severity severity_from_string(std::string_view name) {
  if (name == "NO") return Severity::NO;
  if (name == "MILD") return Severity::MILD;
  if (name == "MODERATE") return Severity::MODERATE;
  if (name == "SEVERE") return Severity::SEVERE;
  throw FormatError("unknown severity: " + std::string(name));
}

/// The fixed set of AD-associated brain regions, in rendering order.
inline const std::vector<std::string>& ad_regions() {
  static const std::vector<std::string> regions = {
      "Hippocampus",      "Amygdala",       "Entorhinal",    "Parahippocampus",
      "Medial Temporal Lobe", "Fusiform",  "Precuneus",     "Superior Parietal",
      "Lateral Ventricle", "Frontal Lobe",  "Temporal Lobe", "Parietal Lobe",
      "Occipital Lobe",   "Cerebral Cortex"};
  return regions;
}

inline const std::string& region_phrase(const std::string& region) {
  static const std::map<std::string, std::string> phrases = {
      {"Hippocampus", "hippocampal"},
      {"Amygdala", "amygdala"},
      {"Entorhinal", "entorhinal"},
      {"Parahippocampus", "parahippocampal"},
      {"Medial Temporal Lobe", "medial temporal lobe"},
      {"Fusiform", "fusiform"},
      {"Precuneus", "precuneus"},
      {"Superior Parietal", "superior parietal"},
      {"Lateral Ventricle", "lateral ventricle"},
      {"Frontal Lobe", "frontal lobe"},
      {"Temporal Lobe", "temporal lobe"},
      {"Parietal Lobe", "parietal lobe"},
      {"Occipital Lobe", "occipital lobe"},
      {"Cerebral Cortex", "cerebral cortex"}};
  const auto it = phrases.find(region);
  if (it == phrases.end()) throw FormatError("unknown brain region: " + region);
  return it->second;
}

struct EhrRecord {
  int age{0};
  std::string sex;
  int education_years{0};
  std::string marital_status;
  double mmse{0.0};  // 0-30
  bool apoe4_present{false};
  std::map<std::string, Severity> region_atrophy;  // exactly the 14 AD regions
  AnswerLabel gold;

  void validate() const {
    if (mmse < 0.0 || mmse > 30.0) throw FormatError("MMSE out of [0,30]");
    if (region_atrophy.size() != ad_regions().size()) {
      throw FormatError("expected " + std::to_string(ad_regions().size()) + " regions, got " +
                        std::to_string(region_atrophy.size()));
    }
    for (const auto& region : ad_regions()) {
      if (region_atrophy.count(region) == 0) throw FormatError("missing region: " + region);
    }
    const auto& labels = canonical_labels(TaskKind::AdDiagnosis);
    if (std::find(labels.begin(), labels.end(), gold.value) == labels.end()) {
      throw FormatError("EHR gold label out of range: " + gold.value);
    }
  }
};

/// Fills the fixed EHR template: demographics, MMSE/APOE4, then one atrophy
/// line per region in the fixed 14-region order.
inline std::string render_ehr(const EhrRecord& record) {
  record.validate();
  char mmse[32];
  std::snprintf(mmse, sizeof(mmse), "%.1f", record.mmse);
  std::string out = "This patient is a " + std::to_string(record.age) + "-year-old " +
                    record.sex + " who has completed " + std::to_string(record.education_years) +
                    " years of education and is " + record.marital_status + ".\n";
  out += "The patient has a Mini-mental State Examination score of " + std::string(mmse) +
         "/30 and has " + (record.apoe4_present ? "an" : "no") + " APOE4 gene.\n";
  out += "Also, based on their MRI scans:";
  for (const auto& region : ad_regions()) {
    out += "\n- This patient has " + to_string(record.region_atrophy.at(region)) + " " +
           region_phrase(region) + " atrophy.";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------------

namespace detail {

/// RFC-4180ish CSV: quoted fields may hold commas, escaped quotes and
/// newlines.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_open = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"': quoted = true; row_open = true; break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        row_open = true;
        break;
      case '\r': break;
      case '\n':
        if (row_open || !field.empty()) {
          row.push_back(std::move(field));
          field.clear();
          rows.push_back(std::move(row));
          row.clear();
          row_open = false;
        }
        break;
      default: field.push_back(c); row_open = true; break;
    }
  }
  if (row_open || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string padded_index(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline AnswerLabel parse_gold_label(const std::string& raw, TaskKind kind,
                                    const std::vector<Option>& options,
                                    const std::string& where) {
  // Exact canonical value first, then a forgiving canonicalization pass.
  const auto& labels = canonical_labels(kind);
  if (std::find(labels.begin(), labels.end(), raw) != labels.end()) return AnswerLabel{raw};
  const auto parsed = canonicalize_answer(raw, kind, options);
  if (!parsed) throw FormatError(where + ": unparseable gold label: " + raw);
  return *parsed;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

/// Headerless CSV rows of [question, A, B, C, D, answer].
inline std::vector<Problem> load_mmlu_csv(const std::string& path, const DatasetSpec& spec) {
  const auto rows = detail::parse_csv(detail::read_file(path));
  std::vector<Problem> problems;
  static const std::array<const char*, 4> labels = {"A", "B", "C", "D"};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 6) {
      throw FormatError(spec.name + " row " + std::to_string(r) + ": expected 6 columns, got " +
                        std::to_string(row.size()));
    }
    Problem problem;
    problem.id = spec.name + "-" + detail::padded_index(r);
    problem.stem = row[0];
    for (std::size_t c = 0; c < labels.size(); ++c) {
      problem.options.push_back({labels[c], row[c + 1]});
    }
    problem.task_kind = TaskKind::MultipleChoice;
    problem.domain_tag = spec.domain_tag;
    problem.gold = detail::parse_gold_label(row[5], TaskKind::MultipleChoice, problem.options,
                                            spec.name + " row " + std::to_string(r));
    problem.validate();
    problems.push_back(std::move(problem));
  }
  return problems;
}

/// BIG-bench task JSON: {"examples": [{"input": ..., "target_scores": {...}}]}.
inline std::vector<Problem> load_bigbench_json(const std::string& path, const DatasetSpec& spec) {
  json doc;
  try {
    doc = json::parse(detail::read_file(path));
  } catch (const json::exception& ex) {
    throw FormatError(spec.name + ": invalid JSON: " + ex.what());
  }
  if (!doc.contains("examples") || !doc.at("examples").is_array()) {
    throw FormatError(spec.name + ": missing examples list");
  }
  std::vector<Problem> problems;
  std::size_t index = 0;
  for (const auto& example : doc.at("examples")) {
    Problem problem;
    problem.id = spec.name + "-" + detail::padded_index(index);
    if (!example.contains("input")) {
      throw FormatError(spec.name + " example " + std::to_string(index) + ": missing input");
    }
    problem.stem = example.at("input").get<std::string>();
    problem.task_kind = spec.task_kind;
    problem.domain_tag = spec.domain_tag;
    if (!example.contains("target_scores") || !example.at("target_scores").is_object()) {
      throw FormatError(spec.name + " example " + std::to_string(index) +
                        ": missing target_scores");
    }
    std::string best;
    double best_score = -1.0;
    for (const auto& [label, score] : example.at("target_scores").items()) {
      const double value = score.get<double>();
      if (value > best_score) {
        best_score = value;
        best = label;
      }
    }
    problem.gold = detail::parse_gold_label(best, spec.task_kind, {},
                                            spec.name + " example " + std::to_string(index));
    problem.validate();
    problems.push_back(std::move(problem));
    ++index;
  }
  return problems;
}

/// One JSON object per line with question/options/answer keys. Records
/// carrying an image payload are dropped (text-only scope), as are records
/// whose language key flags them as non-English.
inline std::vector<Problem> load_jsonlines(const std::string& path, const DatasetSpec& spec) {
  std::istringstream stream(detail::read_file(path));
  std::string line;
  std::vector<Problem> problems;
  std::size_t row = 0;
  std::size_t kept = 0;
  while (std::getline(stream, line)) {
    const std::size_t row_index = row++;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& ex) {
      throw FormatError(spec.name + " line " + std::to_string(row_index) + ": " + ex.what());
    }
    if (record.contains("image") && !record.at("image").is_null()) continue;
    if (record.contains("language")) {
      const std::string lang = selftaught::detail::lower_copy(
          record.at("language").get<std::string>());
      if (lang != "en" && lang != "english") continue;
    }
    Problem problem;
    problem.id = spec.name + "-" + detail::padded_index(kept);
    if (!record.contains("question")) {
      throw FormatError(spec.name + " line " + std::to_string(row_index) + ": missing question");
    }
    problem.stem = record.at("question").get<std::string>();
    problem.task_kind = spec.task_kind;
    problem.domain_tag = spec.domain_tag;
    if (record.contains("options") && !record.at("options").is_null()) {
      const auto& options = record.at("options");
      if (options.is_object()) {
        for (const auto& [label, text] : options.items()) {
          problem.options.push_back({label, text.get<std::string>()});
        }
      } else if (options.is_array()) {
        static const char* labels = "ABCDE";
        std::size_t i = 0;
        for (const auto& text : options) {
          if (i >= 5) {
            throw FormatError(spec.name + " line " + std::to_string(row_index) +
                              ": more than 5 options");
          }
          problem.options.push_back({std::string(1, labels[i++]), text.get<std::string>()});
        }
      } else {
        throw FormatError(spec.name + " line " + std::to_string(row_index) +
                          ": options must be object or array");
      }
    }
    if (!record.contains("answer")) {
      throw FormatError(spec.name + " line " + std::to_string(row_index) + ": missing answer");
    }
    problem.gold = detail::parse_gold_label(record.at("answer").get<std::string>(),
                                            spec.task_kind, problem.options,
                                            spec.name + " line " + std::to_string(row_index));
    problem.validate();
    problems.push_back(std::move(problem));
    ++kept;
  }
  return problems;
}

inline EhrRecord ehr_record_from_json(const json& record, const std::string& where) {
  EhrRecord out;
  try {
    out.age = record.at("age").get<int>();
    out.sex = record.at("sex").get<std::string>();
    out.education_years = record.at("education_years").get<int>();
    out.marital_status = record.at("marital_status").get<std::string>();
    out.mmse = record.at("mmse").get<double>();
    out.apoe4_present = record.at("apoe4_present").get<bool>();
    for (const auto& [region, severity] : record.at("region_atrophy").items()) {
      out.region_atrophy[region] = severity_from_string(severity.get<std::string>());
    }
  } catch (const json::exception& ex) {
    throw FormatError(where + ": " + ex.what());
  }
  const std::string diagnosis = record.at("diagnosis").get<std::string>();
  const auto gold = canonicalize_answer(diagnosis, TaskKind::AdDiagnosis);
  if (!gold) throw FormatError(where + ": unparseable diagnosis: " + diagnosis);
  out.gold = *gold;
  out.validate();
  return out;
}

inline json ehr_record_to_json(const EhrRecord& record) {
  json regions = json::object();
  for (const auto& region : ad_regions()) {
    regions[region] = to_string(record.region_atrophy.at(region));
  }
  return {{"age", record.age},
          {"sex", record.sex},
          {"education_years", record.education_years},
          {"marital_status", record.marital_status},
          {"mmse", record.mmse},
          {"apoe4_present", record.apoe4_present},
          {"region_atrophy", regions},
          {"diagnosis", record.gold.value}};
}

inline Problem problem_from_ehr(const EhrRecord& record, std::string id, std::string domain_tag) {
  Problem problem;
  problem.id = std::move(id);
  problem.stem = render_ehr(record);
  problem.task_kind = TaskKind::AdDiagnosis;
  problem.gold = record.gold;
  problem.domain_tag = std::move(domain_tag);
  problem.validate();
  return problem;
}

/// JSON array of per-patient objects matching EhrRecord.
inline std::vector<Problem> load_ehr_json(const std::string& path, const DatasetSpec& spec) {
  json doc;
  try {
    doc = json::parse(detail::read_file(path));
  } catch (const json::exception& ex) {
    throw FormatError(spec.name + ": invalid JSON: " + ex.what());
  }
  if (!doc.is_array()) throw FormatError(spec.name + ": expected a JSON array of patients");
  std::vector<Problem> problems;
  std::size_t index = 0;
  for (const auto& item : doc) {
    const std::string where = spec.name + " patient " + std::to_string(index);
    const EhrRecord record = ehr_record_from_json(item, where);
    problems.push_back(problem_from_ehr(record, spec.name + "-" + detail::padded_index(index),
                                        spec.domain_tag));
    ++index;
  }
  return problems;
}

inline std::vector<Problem> load_split(const DatasetSpec& spec, const std::string& path) {
  switch (spec.format) {
    case DatasetFormat::MmluCsv: return load_mmlu_csv(path, spec);
    case DatasetFormat::BigBenchJson: return load_bigbench_json(path, spec);
    case DatasetFormat::JsonLines: return load_jsonlines(path, spec);
    case DatasetFormat::EhrJson: return load_ehr_json(path, spec);
  }
  throw Error("unhandled dataset format");
}

/// Loads the test split with the expected-size gate applied.
inline std::vector<Problem> load_dataset(const DatasetSpec& spec) {
  auto problems = load_split(spec, spec.test_path);
  if (spec.expected_size && static_cast<int>(problems.size()) != *spec.expected_size) {
    throw SizeMismatch(spec.name + ": expected " + std::to_string(*spec.expected_size) +
                       " problems, loaded " + std::to_string(problems.size()));
  }
  return problems;
}

inline std::optional<std::vector<Problem>> load_train_split(const DatasetSpec& spec) {
  if (!spec.train_path) return std::nullopt;
  return load_split(spec, *spec.train_path);
}

/// Carves demonstration instances out of the evaluation set: pool holds the
/// claimed demo instances, eval_set the rest; together they partition the
/// input.
inline std::pair<std::vector<Problem>, std::vector<Problem>> split_pool_and_eval(
    const std::vector<Problem>& problems, const std::set<std::string>& demo_ids) {
  for (const auto& id : demo_ids) {
    const bool known = std::any_of(problems.begin(), problems.end(),
                                   [&](const Problem& p) { return p.id == id; });
    if (!known) throw UnknownDemoId("demo id not in dataset: " + id);
  }
  std::vector<Problem> pool;
  std::vector<Problem> eval_set;
  for (const auto& problem : problems) {
    if (demo_ids.count(problem.id) > 0) {
      pool.push_back(problem);
    } else {
      eval_set.push_back(problem);
    }
  }
  return {std::move(pool), std::move(eval_set)};
}

// ---------------------------------------------------------------------------
// Canonical internal format
// ---------------------------------------------------------------------------

inline json problem_to_json(const Problem& problem) {
  json options = json::array();
  for (const auto& option : problem.options) {
    options.push_back({{"label", option.label}, {"text", option.text}});
  }
  return {{"id", problem.id},
          {"stem", problem.stem},
          {"options", options},
          {"gold", problem.gold.value},
          {"task_kind", to_string(problem.task_kind)},
          {"domain_tag", problem.domain_tag}};
}

inline Problem problem_from_json(const json& doc) {
  Problem problem;
  problem.id = doc.at("id").get<std::string>();
  problem.stem = doc.at("stem").get<std::string>();
  for (const auto& option : doc.at("options")) {
    problem.options.push_back(
        {option.at("label").get<std::string>(), option.at("text").get<std::string>()});
  }
  problem.gold = AnswerLabel{doc.at("gold").get<std::string>()};
  problem.task_kind = task_kind_from_string(doc.at("task_kind").get<std::string>());
  problem.domain_tag = doc.at("domain_tag").get<std::string>();
  problem.validate();
  return problem;
}

// ---------------------------------------------------------------------------
// Task catalog
// ---------------------------------------------------------------------------

/// The benchmark suite's fifteen tasks with their formats and size gates;
/// file paths come from the run configuration.
inline const std::vector<DatasetSpec>& catalog() {
  static const std::vector<DatasetSpec> specs = [] {
    std::vector<DatasetSpec> out;
    auto add = [&](std::string name, TaskKind kind, DatasetFormat format, int size,
                   std::string domain) {
      DatasetSpec spec;
      spec.name = std::move(name);
      spec.task_kind = kind;
      spec.format = format;
      spec.expected_size = size;
      spec.domain_tag = std::move(domain);
      out.push_back(std::move(spec));
    };
    add("strategyqa", TaskKind::YesNo, DatasetFormat::BigBenchJson, 2290, "strategyqa");
    add("scienceqa", TaskKind::MultipleChoice, DatasetFormat::JsonLines, 2224, "scienceqa");
    add("medqa", TaskKind::MultipleChoice, DatasetFormat::JsonLines, 1273, "medqa");
    add("college-cs", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 100, "college-cs");
    add("college-med", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 173, "college-medicine");
    add("college-chem", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 100, "college-chemistry");
    add("college-math", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 100, "college-math");
    add("college-phys", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 102, "college-physics");
    add("college-bio", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 144, "college-biology");
    add("pro-acct", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 282, "pro-accounting");
    add("pro-med", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 272, "pro-medicine");
    add("pro-psych", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 612, "pro-psychology");
    add("pro-law", TaskKind::MultipleChoice, DatasetFormat::MmluCsv, 1534, "pro-law");
    add("adni", TaskKind::AdDiagnosis, DatasetFormat::EhrJson, 759, "adni");
    add("aibl", TaskKind::AdDiagnosis, DatasetFormat::EhrJson, 428, "aibl");
    return out;
  }();
  return specs;
}

inline std::optional<DatasetSpec> catalog_lookup(const std::string& name) {
  for (const auto& spec : catalog()) {
    if (spec.name == name) return spec;
  }
  return std::nullopt;
}

}  // namespace selftaught::datasets
