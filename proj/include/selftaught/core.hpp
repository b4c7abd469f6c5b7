#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "selftaught/detail/sha256.hpp"

namespace selftaught {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { MultipleChoice, YesNo, AdDiagnosis };

inline std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::MultipleChoice: return "multiple-choice";
    case TaskKind::YesNo: return "yes-no";
    case TaskKind::AdDiagnosis: return "ad-diagnosis";
  }
  return "unknown";
}

inline TaskKind task_kind_from_string(std::string_view name) {
  if (name == "multiple-choice") return TaskKind::MultipleChoice;
  if (name == "yes-no") return TaskKind::YesNo;
  if (name == "ad-diagnosis") return TaskKind::AdDiagnosis;
  throw Error("unknown task kind: " + std::string(name));
}

/// Canonical answer label: a single uppercase letter, "Yes"/"No", or a
/// diagnosis class name. An empty value means "no extractable answer" and
/// only appears on self-created demonstrations, never on scored predictions.
struct AnswerLabel {
  std::string value;

  bool empty() const { return value.empty(); }
  friend bool operator==(const AnswerLabel&, const AnswerLabel&) = default;
};

struct Option {
  std::string label;
  std::string text;

  friend bool operator==(const Option&, const Option&) = default;
};

inline const std::vector<std::string>& canonical_labels(TaskKind kind) {
  static const std::vector<std::string> mc = {"A", "B", "C", "D", "E"};
  static const std::vector<std::string> yesno = {"Yes", "No"};
  static const std::vector<std::string> ad = {"AD", "MCI", "Normal"};
  switch (kind) {
    case TaskKind::MultipleChoice: return mc;
    case TaskKind::YesNo: return yesno;
    case TaskKind::AdDiagnosis: return ad;
  }
  return mc;
}

struct Problem {
  std::string id;
  std::string stem;
  std::vector<Option> options;  // empty for free-form yes/no and diagnosis tasks
  AnswerLabel gold;
  TaskKind task_kind{TaskKind::MultipleChoice};
  std::string domain_tag;

  void validate() const {
    if (id.empty()) throw Error("problem has empty id");
    const auto& labels = canonical_labels(task_kind);
    if (task_kind == TaskKind::MultipleChoice) {
      if (options.empty()) throw Error("multiple-choice problem " + id + " has no options");
      std::vector<std::string> seen;
      for (const auto& opt : options) {
        if (std::find(labels.begin(), labels.end(), opt.label) == labels.end()) {
          throw Error("problem " + id + " option label out of range: " + opt.label);
        }
        if (std::find(seen.begin(), seen.end(), opt.label) != seen.end()) {
          throw Error("problem " + id + " duplicate option label: " + opt.label);
        }
        seen.push_back(opt.label);
      }
      if (std::find(seen.begin(), seen.end(), gold.value) == seen.end()) {
        throw Error("problem " + id + " gold label not among options: " + gold.value);
      }
    } else {
      if (!options.empty()) throw Error("problem " + id + " must not carry options");
      if (std::find(labels.begin(), labels.end(), gold.value) == labels.end()) {
        throw Error("problem " + id + " gold label out of range: " + gold.value);
      }
    }
  }
};

enum class DemoOrigin { Human, SelfCreated, Retrieved, Clustered };

inline std::string to_string(DemoOrigin origin) {
  switch (origin) {
    case DemoOrigin::Human: return "human";
    case DemoOrigin::SelfCreated: return "self-created";
    case DemoOrigin::Retrieved: return "retrieved";
    case DemoOrigin::Clustered: return "clustered";
  }
  return "unknown";
}

struct Demonstration {
  std::string problem_text;
  std::string rationale;  // empty for Direct-style demonstrations
  AnswerLabel answer;
  DemoOrigin origin{DemoOrigin::Human};
  // Set by rationale annotation when the LLM's answer disagrees with gold or
  // could not be extracted at all.
  bool annotated_answer_mismatch{false};
  bool annotated_answer_unparsed{false};

  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

struct DemoSet {
  std::vector<Demonstration> demos;
  std::optional<std::string> target_id;  // nullopt for fixed task-level sets

  bool empty() const { return demos.empty(); }
  std::size_t size() const { return demos.size(); }
};

struct FilterConfig {
  int n_shots{3};      // N
  int lambda{90};      // certainty acceptance threshold
  int max_attempts{5}; // t

  static FilterConfig defaults_for(TaskKind kind) {
    FilterConfig cfg;
    if (kind == TaskKind::AdDiagnosis) cfg.n_shots = 2;
    return cfg;
  }

  void validate() const {
    if (n_shots < 1) throw Error("n_shots must be positive");
    if (lambda < 0 || lambda > 100) throw Error("lambda must be within 0-100");
    if (max_attempts < 1) throw Error("max_attempts must be positive");
  }
};

enum class SolverStyle { Direct, CoT, PS };

inline std::string to_string(SolverStyle style) {
  switch (style) {
    case SolverStyle::Direct: return "direct";
    case SolverStyle::CoT: return "cot";
    case SolverStyle::PS: return "ps";
  }
  return "unknown";
}

inline SolverStyle solver_style_from_string(std::string_view name) {
  if (name == "direct") return SolverStyle::Direct;
  if (name == "cot") return SolverStyle::CoT;
  if (name == "ps") return SolverStyle::PS;
  throw Error("unknown solver style: " + std::string(name));
}

enum class MethodKind {
  ZsDirect,
  ZsCoT,
  ZsPS,
  ZsRiC,
  ZsRolePlay,
  FsDirect,
  ManualCoT,
  RetrievalCoT,
  AutoCoT,
  SelfTaught,
};

enum class PipelineVariant { Full, NoPhase1, NoCF, NoBoth, SpecificInfo };

inline std::string to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::ZsDirect: return "zs-direct";
    case MethodKind::ZsCoT: return "zs-cot";
    case MethodKind::ZsPS: return "zs-ps";
    case MethodKind::ZsRiC: return "zs-ric";
    case MethodKind::ZsRolePlay: return "zs-roleplay";
    case MethodKind::FsDirect: return "fs-direct";
    case MethodKind::ManualCoT: return "manual-cot";
    case MethodKind::RetrievalCoT: return "retrieval-cot";
    case MethodKind::AutoCoT: return "auto-cot";
    case MethodKind::SelfTaught: return "selftaught";
  }
  return "unknown";
}

inline std::string to_string(PipelineVariant variant) {
  switch (variant) {
    case PipelineVariant::Full: return "full";
    case PipelineVariant::NoPhase1: return "no-phase1";
    case PipelineVariant::NoCF: return "no-cf";
    case PipelineVariant::NoBoth: return "no-both";
    case PipelineVariant::SpecificInfo: return "specific-info";
  }
  return "unknown";
}

inline PipelineVariant pipeline_variant_from_string(std::string_view name) {
  if (name == "full") return PipelineVariant::Full;
  if (name == "no-phase1") return PipelineVariant::NoPhase1;
  if (name == "no-cf") return PipelineVariant::NoCF;
  if (name == "no-both") return PipelineVariant::NoBoth;
  if (name == "specific-info") return PipelineVariant::SpecificInfo;
  throw Error("unknown pipeline variant: " + std::string(name));
}

struct MethodId {
  MethodKind kind{MethodKind::ZsCoT};
  PipelineVariant variant{PipelineVariant::Full};  // SelfTaught only

  bool is_zero_shot() const {
    switch (kind) {
      case MethodKind::ZsDirect:
      case MethodKind::ZsCoT:
      case MethodKind::ZsPS:
      case MethodKind::ZsRiC:
      case MethodKind::ZsRolePlay: return true;
      default: return false;
    }
  }
  bool is_few_shot() const {
    switch (kind) {
      case MethodKind::FsDirect:
      case MethodKind::ManualCoT:
      case MethodKind::RetrievalCoT:
      case MethodKind::AutoCoT: return true;
      default: return false;
    }
  }

  friend bool operator==(const MethodId&, const MethodId&) = default;
};

inline std::string method_label(const MethodId& method, SolverStyle style = SolverStyle::CoT) {
  std::string label = to_string(method.kind);
  if (method.kind == MethodKind::SelfTaught && method.variant != PipelineVariant::Full) {
    label += "+" + to_string(method.variant);
  }
  if (method.kind == MethodKind::SelfTaught && style != SolverStyle::CoT) {
    label += "@" + to_string(style);
  }
  return label;
}

inline MethodId method_from_string(std::string_view name) {
  static const std::vector<std::pair<std::string, MethodKind>> table = {
      {"zs-direct", MethodKind::ZsDirect},     {"zs-cot", MethodKind::ZsCoT},
      {"zs-ps", MethodKind::ZsPS},             {"zs-ric", MethodKind::ZsRiC},
      {"zs-roleplay", MethodKind::ZsRolePlay}, {"fs-direct", MethodKind::FsDirect},
      {"manual-cot", MethodKind::ManualCoT},   {"retrieval-cot", MethodKind::RetrievalCoT},
      {"auto-cot", MethodKind::AutoCoT},       {"selftaught", MethodKind::SelfTaught}};
  for (const auto& [key, kind] : table) {
    if (name == key) return MethodId{kind};
  }
  throw Error("unknown method: " + std::string(name));
}

struct RunConfig {
  MethodId method;
  std::string model_name{"gpt-3.5-turbo-0125"};
  double temperature{0.7};
  std::string seed_tag{"run-1"};  // run-1 / run-2 / run-3
  FilterConfig filter;
  SolverStyle solver_style{SolverStyle::CoT};
};

/// Deterministic content digest used for cache keys and config snapshots.
inline std::string stable_hash(std::string_view payload) {
  return detail::sha256_hex(payload);
}

namespace detail {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline char upper(char c) { return static_cast<char>(std::toupper(static_cast<unsigned char>(c))); }

inline std::string lower_copy(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

// Position of the last word-boundary occurrence of `needle` (already
// lowercased) in `haystack` (already lowercased), or npos.
inline std::size_t last_word_occurrence(const std::string& haystack, const std::string& needle,
                                        bool require_right_boundary = true) {
  if (needle.empty()) return std::string::npos;
  std::size_t best = std::string::npos;
  std::size_t pos = haystack.find(needle);
  while (pos != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok =
        !require_right_boundary || end >= haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) best = pos;
    pos = haystack.find(needle, pos + 1);
  }
  return best;
}

}  // namespace detail

/// Extracts a canonical answer label from model text. Scans every precedence
/// tier from the end of the text (final-answer convention): wrapped/suffixed
/// letter, bare letter token, full option text, class-name keyword. Returns
/// nullopt (ParseFailure) when nothing in the task's label set occurs.
inline std::optional<AnswerLabel> canonicalize_answer(std::string_view raw, TaskKind kind,
                                                      std::span<const Option> options = {}) {
  if (raw.empty()) return std::nullopt;

  if (kind == TaskKind::MultipleChoice) {
    const std::size_t n = raw.size();
    std::size_t wrapped_pos = std::string::npos;
    std::size_t bare_pos = std::string::npos;
    char wrapped_label = 0;
    char bare_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const char up = detail::upper(raw[i]);
      if (up < 'A' || up > 'E') continue;
      const bool left_ok = i == 0 || !detail::is_word_char(raw[i - 1]);
      if (!left_ok) continue;
      const char prev = i > 0 ? raw[i - 1] : '\0';
      const char next = i + 1 < n ? raw[i + 1] : '\0';
      const bool parenthesized = (prev == '(' && next == ')') || (prev == '[' && next == ']');
      const bool suffixed = next == ')' || next == ']' || next == '.' || next == ':';
      if (parenthesized || suffixed) {
        wrapped_pos = i;
        wrapped_label = up;
      }
      const bool right_ok = i + 1 >= n || !detail::is_word_char(raw[i + 1]);
      if (right_ok) {
        bare_pos = i;
        bare_label = up;
      }
    }
    if (wrapped_pos != std::string::npos) return AnswerLabel{std::string(1, wrapped_label)};
    if (bare_pos != std::string::npos) return AnswerLabel{std::string(1, bare_label)};

    // Full option text match, latest occurrence wins; ties go to option order.
    const std::string hay = detail::lower_copy(raw);
    std::size_t best_pos = std::string::npos;
    const Option* best_option = nullptr;
    for (const auto& opt : options) {
      std::string text = detail::lower_copy(opt.text);
      while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
      if (text.empty()) continue;
      std::size_t pos = hay.rfind(text);
      if (pos == std::string::npos) continue;
      if (best_pos == std::string::npos || pos > best_pos) {
        best_pos = pos;
        best_option = &opt;
      }
    }
    if (best_option != nullptr) return AnswerLabel{best_option->label};
    return std::nullopt;
  }

  const std::string hay = detail::lower_copy(raw);
  if (kind == TaskKind::YesNo) {
    const std::size_t yes_pos = detail::last_word_occurrence(hay, "yes");
    const std::size_t no_pos = detail::last_word_occurrence(hay, "no");
    if (yes_pos == std::string::npos && no_pos == std::string::npos) return std::nullopt;
    if (no_pos == std::string::npos || (yes_pos != std::string::npos && yes_pos > no_pos)) {
      return AnswerLabel{"Yes"};
    }
    return AnswerLabel{"No"};
  }

  // AD diagnosis keywords. "alzheimer" only needs a left boundary so that
  // possessive forms still match.
  struct Keyword {
    const char* text;
    const char* label;
    bool right_boundary;
  };
  static constexpr Keyword keywords[] = {
      {"mild cognitive impairment", "MCI", true},
      {"mci", "MCI", true},
      {"alzheimer", "AD", false},
      {"ad", "AD", true},
      {"normal", "Normal", true},
  };
  std::size_t best_pos = std::string::npos;
  const char* best_label = nullptr;
  for (const auto& kw : keywords) {
    const std::size_t pos = detail::last_word_occurrence(hay, kw.text, kw.right_boundary);
    if (pos == std::string::npos) continue;
    if (best_pos == std::string::npos || pos > best_pos) {
      best_pos = pos;
      best_label = kw.label;
    }
  }
  if (best_label != nullptr) return AnswerLabel{std::string(best_label)};
  return std::nullopt;
}

}  // namespace selftaught
