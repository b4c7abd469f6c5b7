#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "selftaught/core.hpp"
#include "selftaught/provider.hpp"

namespace selftaught::prompts {

class UnknownTemplate : public Error {
 public:
  using Error::Error;
};

class UnboundSlot : public Error {
 public:
  using Error::Error;
};

class MissingTemplate : public Error {
 public:
  using Error::Error;
};

struct Segment {
  bool is_slot{false};
  std::string text;  // literal text, or the slot name
};

struct TemplateMessage {
  std::string role;
  std::vector<Segment> segments;
};

/// One prompt template parsed from a text file. Files may open with '#'
/// comment lines; '@system' / '@user' / '@assistant' lines start a new
/// message; ${name} placeholders are slots filled at render time.
struct PromptTemplate {
  std::string id;
  std::vector<TemplateMessage> messages;

  static PromptTemplate parse(std::string id, const std::string& text) {
    PromptTemplate tmpl;
    tmpl.id = std::move(id);
    std::vector<std::pair<std::string, std::string>> raw_messages;  // role, body
    std::string role = "user";
    std::string body;
    bool body_open = false;
    std::istringstream lines(text);
    std::string line;
    auto flush = [&] {
      if (body_open) raw_messages.emplace_back(role, body);
      body.clear();
      body_open = false;
    };
    while (std::getline(lines, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line.front() == '#') continue;
      if (line == "@system" || line == "@user" || line == "@assistant") {
        flush();
        role = line.substr(1);
        body_open = true;
        continue;
      }
      if (!body_open && line.empty()) continue;  // blank lines before first content
      if (body_open && !body.empty()) body += "\n";
      if (!body_open) body_open = true;
      body += line;
    }
    flush();
    for (auto& [msg_role, msg_body] : raw_messages) {
      while (!msg_body.empty() && (msg_body.front() == '\n')) msg_body.erase(0, 1);
      while (!msg_body.empty() &&
             (msg_body.back() == '\n' || msg_body.back() == ' ' || msg_body.back() == '\t')) {
        msg_body.pop_back();
      }
      if (msg_body.empty()) continue;
      TemplateMessage message;
      message.role = msg_role;
      message.segments = split_segments(msg_body);
      tmpl.messages.push_back(std::move(message));
    }
    if (tmpl.messages.empty()) throw Error("template " + tmpl.id + " has no content");
    return tmpl;
  }

  std::vector<std::string> slots() const {
    std::vector<std::string> out;
    for (const auto& message : messages) {
      for (const auto& segment : message.segments) {
        if (segment.is_slot &&
            std::find(out.begin(), out.end(), segment.text) == out.end()) {
          out.push_back(segment.text);
        }
      }
    }
    return out;
  }

 private:
  static std::vector<Segment> split_segments(const std::string& body) {
    std::vector<Segment> segments;
    std::string literal;
    std::size_t i = 0;
    while (i < body.size()) {
      if (body[i] == '$' && i + 1 < body.size() && body[i + 1] == '{') {
        const auto close = body.find('}', i + 2);
        if (close != std::string::npos) {
          if (!literal.empty()) {
            segments.push_back({false, literal});
            literal.clear();
          }
          segments.push_back({true, body.substr(i + 2, close - i - 2)});
          i = close + 1;
          continue;
        }
      }
      literal.push_back(body[i]);
      ++i;
    }
    if (!literal.empty()) segments.push_back({false, literal});
    return segments;
  }
};

struct RenderedPrompt {
  std::vector<provider::Message> messages;
  std::string template_id;

  provider::LlmRequest to_request(const std::string& model, double temperature) const {
    provider::LlmRequest request;
    request.model_name = model;
    request.messages = messages;
    request.temperature = temperature;
    return request;
  }

  std::string joined_text() const {
    std::string out;
    for (const auto& msg : messages) {
      out += msg.content;
      out += "\n";
    }
    return out;
  }

  friend bool operator==(const RenderedPrompt&, const RenderedPrompt&) = default;
};

using Bindings = std::map<std::string, std::string>;

inline std::string task_suffix(TaskKind kind) {
  return kind == TaskKind::AdDiagnosis ? "ad" : "qa";
}

/// Fixed instruction appended to Phase II-2 prompts when certainty filtering
/// is active; byte-identical across calls.
inline const std::string& render_certainty_suffix() {
  static const std::string suffix =
      "After giving your final answer, end your response with exactly one additional line of "
      "the form \"Certainty: <integer between 0 and 100>\" expressing how certain you are that "
      "your answer is correct.";
  return suffix;
}

/// Registry over the full method x task template matrix; loading fails fast
/// when any required cell is missing from the directory.
class PromptRegistry {
 public:
  static const std::vector<std::string>& required_cells() {
    static const std::vector<std::string> cells = [] {
      const std::vector<std::string> families = {
          "zeroshot-direct",    "zeroshot-cot",
          "zeroshot-ps",        "zeroshot-ric",
          "zeroshot-roleplay",  "fewshot-direct",
          "manual-cot",         "retrieval-cot",
          "auto-cot",           "selftaught-phase3",
          "selftaught-phase3-direct", "selftaught-phase3-ps",
          "phase1",             "phase1-specific",
          "phase2-1",           "phase2-1-noinfo",
          "phase2-2",           "phase2-2-direct",
          "phase2-2-ps"};
      std::vector<std::string> out;
      for (const auto& family : families) {
        out.push_back(family + ".qa");
        out.push_back(family + ".ad");
      }
      return out;
    }();
    return cells;
  }

  static PromptRegistry load_from_dir(const std::filesystem::path& dir) {
    PromptRegistry registry;
    registry.dir_ = dir;
    if (!std::filesystem::is_directory(dir)) {
      throw MissingTemplate("prompt directory not found: " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".txt") continue;
      const std::string id = entry.path().stem().string();
      std::ifstream in(entry.path());
      std::ostringstream text;
      text << in.rdbuf();
      registry.templates_.emplace(id, PromptTemplate::parse(id, text.str()));
    }
    registry.check_required();
    return registry;
  }

  const PromptTemplate& get(const std::string& id) const {
    const auto it = templates_.find(id);
    if (it == templates_.end()) throw UnknownTemplate("no template with id: " + id);
    return it->second;
  }

  bool contains(const std::string& id) const { return templates_.count(id) > 0; }

  RenderedPrompt render(const std::string& id, const Bindings& bindings) const {
    const PromptTemplate& tmpl = get(id);
    RenderedPrompt rendered;
    rendered.template_id = id;
    for (const auto& message : tmpl.messages) {
      std::string content;
      for (const auto& segment : message.segments) {
        if (!segment.is_slot) {
          content += segment.text;
          continue;
        }
        const auto bound = bindings.find(segment.text);
        if (bound == bindings.end()) {
          throw UnboundSlot("template " + id + " slot not bound: " + segment.text);
        }
        content += bound->second;
      }
      rendered.messages.push_back({message.role, std::move(content)});
    }
    return rendered;
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  void check_required() const {
    std::string missing;
    for (const auto& cell : required_cells()) {
      if (templates_.count(cell) == 0) {
        if (!missing.empty()) missing += ", ";
        missing += cell;
      }
    }
    if (!missing.empty()) {
      throw MissingTemplate("prompt directory " + dir_.string() +
                            " is missing required templates: " + missing);
    }
  }

  std::filesystem::path dir_;
  std::map<std::string, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Binding helpers shared by pipeline and baselines
// ---------------------------------------------------------------------------

inline std::string problem_noun(TaskKind kind) {
  return kind == TaskKind::AdDiagnosis ? "Patient Description" : "Question";
}

/// Option block with trailing newline ("Options:\n(A) ...\n"), or the empty
/// string for option-free tasks, so templates can splice ${options} inline.
inline std::string render_options(const Problem& problem) {
  if (problem.options.empty()) return "";
  std::string out = "Options:\n";
  for (const auto& option : problem.options) {
    out += "(" + option.label + ") " + option.text + "\n";
  }
  return out;
}

inline std::string render_demo_block(const Demonstration& demo, TaskKind kind) {
  std::string out = problem_noun(kind) + ": " + demo.problem_text;
  if (!demo.rationale.empty()) out += "\nAnswer: " + demo.rationale;
  if (!demo.answer.empty()) out += "\nFinal Answer: " + demo.answer.value;
  return out;
}

/// Demonstrations in presentation order, each block closed by a '---'
/// delimiter line; the empty set renders as the empty string so few-shot
/// templates degenerate byte-exactly into their zero-shot bodies.
inline std::string render_demos(const DemoSet& demos, TaskKind kind) {
  std::string out;
  for (const auto& demo : demos.demos) {
    out += render_demo_block(demo, kind);
    out += "\n---\n";
  }
  return out;
}

inline Bindings problem_bindings(const Problem& problem) {
  return {{"problem", problem.stem}, {"options", render_options(problem)}};
}

inline std::string zero_shot_template_id(MethodKind kind, TaskKind task) {
  std::string family;
  switch (kind) {
    case MethodKind::ZsDirect: family = "zeroshot-direct"; break;
    case MethodKind::ZsCoT: family = "zeroshot-cot"; break;
    case MethodKind::ZsPS: family = "zeroshot-ps"; break;
    case MethodKind::ZsRiC: family = "zeroshot-ric"; break;
    case MethodKind::ZsRolePlay: family = "zeroshot-roleplay"; break;
    default: throw Error("not a zero-shot method: " + to_string(kind));
  }
  return family + "." + task_suffix(task);
}

inline std::string few_shot_template_id(MethodKind kind, TaskKind task) {
  std::string family;
  switch (kind) {
    case MethodKind::FsDirect: family = "fewshot-direct"; break;
    case MethodKind::ManualCoT: family = "manual-cot"; break;
    case MethodKind::RetrievalCoT: family = "retrieval-cot"; break;
    case MethodKind::AutoCoT: family = "auto-cot"; break;
    default: throw Error("not a few-shot method: " + to_string(kind));
  }
  return family + "." + task_suffix(task);
}

/// Template id for a solver-style-dependent family ("phase2-2",
/// "selftaught-phase3"): the CoT cell carries the bare family name.
inline std::string styled_template_id(const std::string& family, SolverStyle style,
                                      TaskKind task) {
  std::string id = family;
  if (style == SolverStyle::Direct) id += "-direct";
  if (style == SolverStyle::PS) id += "-ps";
  return id + "." + task_suffix(task);
}

namespace detail {

inline std::optional<int> parse_certainty_line(std::string_view line) {
  static constexpr std::string_view marker = "Certainty:";
  const auto pos = line.rfind(marker);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t i = pos + marker.size();
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  bool negative = false;
  if (i < line.size() && (line[i] == '-' || line[i] == '+')) {
    negative = line[i] == '-';
    ++i;
  }
  if (i >= line.size() || !std::isdigit(static_cast<unsigned char>(line[i]))) return std::nullopt;
  long value = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
    value = value * 10 + (line[i] - '0');
    if (value > 1000000) break;
    ++i;
  }
  if (negative) value = -value;
  return static_cast<int>(std::clamp<long>(value, 0, 100));
}

}  // namespace detail

/// Parses a Phase II-2 certainty score: the last line matching
/// "Certainty: <int>" wins. Values clamp into [0, 100]; no matching line
/// yields nullopt (recorded as Missing).
inline std::optional<int> parse_certainty(std::string_view text) {
  std::optional<int> result;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    const auto line = text.substr(start, end == std::string_view::npos ? text.size() - start
                                                                       : end - start);
    if (const auto value = detail::parse_certainty_line(line)) result = value;
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return result;
}

/// Removes trailing certainty/self-evaluation lines from a rationale before
/// it is inserted as a Phase III demonstration.
inline std::string strip_certainty_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream stream(text);
  while (std::getline(stream, line)) lines.push_back(line);
  while (!lines.empty()) {
    const std::string& last = lines.back();
    const bool blank = last.find_first_not_of(" \t\r") == std::string::npos;
    if (blank || last.find("Certainty:") != std::string::npos) {
      lines.pop_back();
      continue;
    }
    break;
  }
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i > 0) out += "\n";
    out += lines[i];
  }
  return out;
}

}  // namespace selftaught::prompts
