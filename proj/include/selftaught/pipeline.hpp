#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "selftaught/core.hpp"
#include "selftaught/prompts.hpp"
#include "selftaught/provider.hpp"

namespace selftaught::pipeline {

using nlohmann::json;

class EmptyIdentification : public Error {
 public:
  using Error::Error;
};

class GenerationShortfall : public Error {
 public:
  using Error::Error;
};

enum class InfoMode { Abstractive, Specific };

inline std::string to_string(InfoMode mode) {
  return mode == InfoMode::Abstractive ? "abstractive" : "specific";
}

struct InfoList {
  std::vector<std::string> items;
  InfoMode mode{InfoMode::Abstractive};
};

struct PseudoProblem {
  std::string text;
  int index{1};  // 1..N within one target's batch
};

struct CertaintyAttempt {
  std::string rationale;     // reply body with certainty lines stripped
  std::string answer_text;   // canonical label value, empty when unparseable
  std::optional<int> cs;     // nullopt records Missing
  int attempt_no{1};         // 1..t
  std::string raw;
};

/// One completed request/response exchange, the unit of tracing.
struct Exchange {
  std::string template_id;
  std::vector<provider::Message> request_messages;
  std::string response_text;
  provider::TokenUsage usage;
  bool cached{false};
  long elapsed_ms{0};
};

/// Per-instance LLM access: renders prompts through one registry, issues
/// completions with the run's sampling settings, and records every exchange
/// for the trace. One session serves one target problem; sessions share the
/// provider freely.
class LlmSession {
 public:
  LlmSession(provider::LlmProvider& llm, const prompts::PromptRegistry& registry,
             RunConfig config, TaskKind task_kind)
      : llm_(llm), registry_(registry), config_(std::move(config)), task_kind_(task_kind) {}

  provider::LlmResponse complete(const prompts::RenderedPrompt& prompt) {
    auto request = prompt.to_request(config_.model_name, config_.temperature);
    const long started = now_ms_ ? now_ms_() : 0;
    provider::LlmResponse response = llm_.complete(request);
    Exchange exchange;
    exchange.template_id = prompt.template_id;
    exchange.request_messages = prompt.messages;
    exchange.response_text = response.text;
    exchange.usage = response.usage;
    exchange.cached = response.cached;
    exchange.elapsed_ms = now_ms_ ? now_ms_() - started : 0;
    exchanges_.push_back(std::move(exchange));
    return response;
  }

  std::vector<provider::EmbeddingVector> embed(const std::vector<std::string>& texts) {
    return llm_.embed(texts);
  }

  const prompts::PromptRegistry& registry() const { return registry_; }
  const RunConfig& config() const { return config_; }
  TaskKind task_kind() const { return task_kind_; }
  const std::vector<Exchange>& exchanges() const { return exchanges_; }
  int completions() const { return static_cast<int>(exchanges_.size()); }

  /// Sum over non-cached exchanges only; cache hits carry no marginal usage.
  provider::TokenUsage usage_total() const {
    provider::TokenUsage total;
    for (const auto& exchange : exchanges_) {
      if (!exchange.cached) total += exchange.usage;
    }
    return total;
  }

  void set_clock(std::function<long()> now_ms) { now_ms_ = std::move(now_ms); }

 private:
  provider::LlmProvider& llm_;
  const prompts::PromptRegistry& registry_;
  RunConfig config_;
  TaskKind task_kind_;
  std::vector<Exchange> exchanges_;
  std::function<long()> now_ms_;
};

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

/// Splits an enumeration reply on list markers ("1.", "2)", "-", "*"). When
/// the reply carries no markers at all, each non-blank line counts as one
/// item, so single-line replies remain usable.
inline std::vector<std::string> parse_list_items(const std::string& reply) {
  std::vector<std::string> marked;
  std::vector<std::string> unmarked;
  std::istringstream stream(reply);
  std::string line;
  while (std::getline(stream, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t i = line.find_first_not_of(" \t");
    if (i == std::string::npos) continue;
    std::size_t content = std::string::npos;
    if (line[i] == '-' || line[i] == '*') {
      content = i + 1;
    } else if (std::isdigit(static_cast<unsigned char>(line[i]))) {
      std::size_t j = i;
      while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
      if (j < line.size() && (line[j] == '.' || line[j] == ')')) content = j + 1;
    }
    std::string trimmed = line.substr(i);
    if (content != std::string::npos) {
      std::string item = line.substr(content);
      const auto begin = item.find_first_not_of(" \t");
      item = begin == std::string::npos ? "" : item.substr(begin);
      if (!item.empty()) marked.push_back(item);
    } else {
      unmarked.push_back(trimmed);
    }
  }
  return marked.empty() ? unmarked : marked;
}

/// Splits a Phase II-1 reply on "Problem <k>:" markers. A marker-free,
/// non-blank reply counts as a single problem (the top-up call shape).
inline std::vector<std::string> parse_pseudo_problem_texts(const std::string& reply) {
  std::vector<std::size_t> starts;   // index of each marker
  std::vector<std::size_t> bodies;   // index just past each marker's colon
  const std::string hay = selftaught::detail::lower_copy(reply);
  static const std::string word = "problem";
  std::size_t pos = hay.find(word);
  while (pos != std::string::npos) {
    const bool left_ok = pos == 0 || !selftaught::detail::is_word_char(hay[pos - 1]);
    std::size_t i = pos + word.size();
    while (i < hay.size() && (hay[i] == ' ' || hay[i] == '\t')) ++i;
    std::size_t digits = 0;
    while (i < hay.size() && std::isdigit(static_cast<unsigned char>(hay[i]))) {
      ++i;
      ++digits;
    }
    while (i < hay.size() && (hay[i] == ' ' || hay[i] == '\t')) ++i;
    if (left_ok && digits > 0 && i < hay.size() && hay[i] == ':') {
      starts.push_back(pos);
      bodies.push_back(i + 1);
    }
    pos = hay.find(word, pos + 1);
  }

  auto trim = [](std::string text) {
    const auto begin = text.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return std::string();
    const auto end = text.find_last_not_of(" \t\r\n");
    return text.substr(begin, end - begin + 1);
  };

  std::vector<std::string> out;
  if (starts.empty()) {
    std::string whole = trim(reply);
    if (!whole.empty()) out.push_back(std::move(whole));
    return out;
  }
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::size_t begin = bodies[k];
    const std::size_t end = k + 1 < starts.size() ? starts[k + 1] : reply.size();
    std::string text = trim(reply.substr(begin, end - begin));
    if (!text.empty()) out.push_back(std::move(text));
  }
  return out;
}

inline std::string render_info_items(const InfoList& info) {
  std::string out;
  for (std::size_t i = 0; i < info.items.size(); ++i) {
    out += std::to_string(i + 1) + ". " + info.items[i];
    if (i + 1 < info.items.size()) out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Phase I: information identification
// ---------------------------------------------------------------------------

inline InfoList identify_information(const Problem& problem, InfoMode mode, LlmSession& session) {
  const std::string family = mode == InfoMode::Specific ? "phase1-specific" : "phase1";
  const std::string id = family + "." + prompts::task_suffix(session.task_kind());
  const auto prompt = session.registry().render(id, prompts::problem_bindings(problem));
  const auto response = session.complete(prompt);
  InfoList info;
  info.mode = mode;
  info.items = parse_list_items(response.text);
  if (info.items.empty()) {
    throw EmptyIdentification("no parseable information items for problem " + problem.id);
  }
  return info;
}

// ---------------------------------------------------------------------------
// Phase II-1: pseudo problem generation
// ---------------------------------------------------------------------------

/// One completion requests all n problems; when fewer parse, single-problem
/// top-up calls (each a fresh completion, carrying what exists so far) fill
/// the batch. Fails with GenerationShortfall when n extra calls still leave
/// the batch short.
inline std::vector<PseudoProblem> generate_pseudo_problems(const Problem& problem,
                                                           const InfoList* info, int n,
                                                           LlmSession& session) {
  if (n < 1) throw Error("pseudo problem count must be >= 1");
  const std::string family = info != nullptr ? "phase2-1" : "phase2-1-noinfo";
  const std::string id = family + "." + prompts::task_suffix(session.task_kind());

  auto bindings = prompts::problem_bindings(problem);
  bindings["n_problems"] = std::to_string(n);
  if (info != nullptr) bindings["information"] = render_info_items(*info);

  const auto first = session.complete(session.registry().render(id, bindings));
  std::vector<std::string> texts = parse_pseudo_problem_texts(first.text);
  if (static_cast<int>(texts.size()) > n) texts.resize(static_cast<std::size_t>(n));

  int top_ups = 0;
  while (static_cast<int>(texts.size()) < n && top_ups < n) {
    auto top_up_bindings = bindings;
    top_up_bindings["n_problems"] = "1";
    auto prompt = session.registry().render(id, top_up_bindings);
    if (!texts.empty()) {
      std::string created = "\n\nYou have already created the following problem(s); "
                            "create a different one:";
      for (std::size_t i = 0; i < texts.size(); ++i) {
        created += "\n" + std::to_string(i + 1) + ". " + texts[i];
      }
      prompt.messages.back().content += created;
    }
    const auto reply = session.complete(prompt);
    auto extra = parse_pseudo_problem_texts(reply.text);
    if (!extra.empty()) texts.push_back(std::move(extra.front()));
    ++top_ups;
  }
  if (static_cast<int>(texts.size()) < n) {
    throw GenerationShortfall("only " + std::to_string(texts.size()) + " of " +
                              std::to_string(n) + " pseudo problems for " + problem.id);
  }

  std::vector<PseudoProblem> out;
  out.reserve(texts.size());
  for (int i = 0; i < n; ++i) out.push_back({texts[static_cast<std::size_t>(i)], i + 1});
  return out;
}

// ---------------------------------------------------------------------------
// Phase II-2: solution generation with certainty filtering
// ---------------------------------------------------------------------------

struct CertaintyOutcome {
  Demonstration demo;
  std::vector<CertaintyAttempt> attempts;
  bool accepted_by_threshold{false};
  int selected_attempt_no{1};
};

/// Generates solutions until one verbalizes cs >= lambda (inclusive) or the
/// attempt budget t runs out; on exhaustion the highest-cs attempt wins and
/// ties break toward the lowest attempt number. Missing scores order below 0.
/// With filtering off the single attempt is always accepted.
inline CertaintyOutcome certainty_filter_loop(const PseudoProblem& pseudo,
                                              const FilterConfig& cfg, SolverStyle style,
                                              LlmSession& session, bool use_filter = true) {
  cfg.validate();
  const TaskKind task = session.task_kind();
  const std::string id = prompts::styled_template_id("phase2-2", style, task);
  auto prompt = session.registry().render(id, {{"pseudo_problem", pseudo.text}});
  if (use_filter) {
    prompt.messages.back().content += "\n\n" + prompts::render_certainty_suffix();
  }

  CertaintyOutcome outcome;
  const int budget = use_filter ? cfg.max_attempts : 1;
  for (int attempt_no = 1; attempt_no <= budget; ++attempt_no) {
    const auto response = session.complete(prompt);
    CertaintyAttempt attempt;
    attempt.raw = response.text;
    attempt.rationale = prompts::strip_certainty_lines(response.text);
    attempt.cs = use_filter ? prompts::parse_certainty(response.text) : std::nullopt;
    const auto answer = canonicalize_answer(response.text, task);
    attempt.answer_text = answer ? answer->value : "";
    attempt.attempt_no = attempt_no;
    outcome.attempts.push_back(std::move(attempt));
    if (use_filter && outcome.attempts.back().cs &&
        *outcome.attempts.back().cs >= cfg.lambda) {
      break;
    }
  }

  int best_index = 0;
  int best_cs = -1;
  for (std::size_t i = 0; i < outcome.attempts.size(); ++i) {
    const int cs = outcome.attempts[i].cs.value_or(-1);
    if (cs > best_cs) {
      best_cs = cs;
      best_index = static_cast<int>(i);
    }
  }
  const auto& selected = outcome.attempts[static_cast<std::size_t>(best_index)];
  outcome.selected_attempt_no = selected.attempt_no;
  outcome.accepted_by_threshold = !use_filter || (selected.cs && *selected.cs >= cfg.lambda);

  outcome.demo.problem_text = pseudo.text;
  outcome.demo.rationale = selected.rationale;
  outcome.demo.answer = AnswerLabel{selected.answer_text};
  outcome.demo.origin = DemoOrigin::SelfCreated;
  return outcome;
}

// ---------------------------------------------------------------------------
// Phase II orchestration and Phase III
// ---------------------------------------------------------------------------

struct TailoredDemoResult {
  DemoSet demo_set;
  std::vector<std::vector<CertaintyAttempt>> trace;  // one list per pseudo problem
  std::vector<bool> accepted_by_threshold;
  std::vector<int> selected_attempt_nos;
  std::vector<PseudoProblem> pseudo_problems;
  std::optional<InfoList> info;
  bool phase1_empty_fallback{false};
};

inline TailoredDemoResult build_tailored_demos(const Problem& problem, const FilterConfig& cfg,
                                               PipelineVariant variant, SolverStyle style,
                                               LlmSession& session) {
  cfg.validate();
  const bool wants_phase1 = variant == PipelineVariant::Full ||
                            variant == PipelineVariant::NoCF ||
                            variant == PipelineVariant::SpecificInfo;
  const bool use_filter =
      variant == PipelineVariant::Full || variant == PipelineVariant::NoPhase1 ||
      variant == PipelineVariant::SpecificInfo;
  const InfoMode mode =
      variant == PipelineVariant::SpecificInfo ? InfoMode::Specific : InfoMode::Abstractive;

  TailoredDemoResult result;
  if (wants_phase1) {
    try {
      result.info = identify_information(problem, mode, session);
    } catch (const EmptyIdentification&) {
      result.phase1_empty_fallback = true;
    }
  }

  const InfoList* info = result.info ? &*result.info : nullptr;
  result.pseudo_problems = generate_pseudo_problems(problem, info, cfg.n_shots, session);

  result.demo_set.target_id = problem.id;
  for (const auto& pseudo : result.pseudo_problems) {
    auto outcome = certainty_filter_loop(pseudo, cfg, style, session, use_filter);
    result.demo_set.demos.push_back(std::move(outcome.demo));
    result.trace.push_back(std::move(outcome.attempts));
    result.accepted_by_threshold.push_back(outcome.accepted_by_threshold);
    result.selected_attempt_nos.push_back(outcome.selected_attempt_no);
  }
  return result;
}

struct SolveResult {
  std::optional<AnswerLabel> answer;  // nullopt records a ParseFailure
  std::string raw;
};

/// Phase III / few-shot solving: demonstrations precede the problem in
/// presentation order; with an empty set the prompt degenerates byte-exactly
/// into the matching zero-shot baseline prompt.
inline SolveResult solve_with_demonstrations(const Problem& problem, const DemoSet& demos,
                                             SolverStyle style, LlmSession& session,
                                             std::optional<std::string> template_id = {}) {
  const TaskKind task = session.task_kind();
  const std::string id =
      template_id ? *template_id : prompts::styled_template_id("selftaught-phase3", style, task);
  auto bindings = prompts::problem_bindings(problem);
  bindings["demos"] = prompts::render_demos(demos, task);
  const auto prompt = session.registry().render(id, bindings);
  const auto response = session.complete(prompt);
  SolveResult result;
  result.raw = response.text;
  result.answer = canonicalize_answer(response.text, task, problem.options);
  return result;
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

inline json to_json(const provider::TokenUsage& usage) {
  return {{"input_tokens", usage.input_tokens},
          {"output_tokens", usage.output_tokens},
          {"estimated", usage.estimated}};
}

inline json to_json(const Exchange& exchange) {
  json messages = json::array();
  for (const auto& msg : exchange.request_messages) {
    messages.push_back({{"role", msg.role}, {"content", msg.content}});
  }
  return {{"template_id", exchange.template_id}, {"request_messages", messages},
          {"response_text", exchange.response_text}, {"usage", to_json(exchange.usage)},
          {"cached", exchange.cached}, {"elapsed_ms", exchange.elapsed_ms}};
}

inline json to_json(const CertaintyAttempt& attempt) {
  return {{"rationale", attempt.rationale},
          {"answer_text", attempt.answer_text},
          {"cs", attempt.cs ? json(*attempt.cs) : json(nullptr)},
          {"attempt_no", attempt.attempt_no},
          {"raw", attempt.raw}};
}

inline json to_json(const Demonstration& demo) {
  return {{"problem_text", demo.problem_text},
          {"rationale", demo.rationale},
          {"answer", demo.answer.value},
          {"origin", to_string(demo.origin)},
          {"annotated_answer_mismatch", demo.annotated_answer_mismatch},
          {"annotated_answer_unparsed", demo.annotated_answer_unparsed}};
}

inline json to_json(const TailoredDemoResult& result) {
  json demos = json::array();
  for (const auto& demo : result.demo_set.demos) demos.push_back(to_json(demo));
  json trace = json::array();
  for (const auto& attempts : result.trace) {
    json list = json::array();
    for (const auto& attempt : attempts) list.push_back(to_json(attempt));
    trace.push_back(std::move(list));
  }
  json pseudo = json::array();
  for (const auto& p : result.pseudo_problems) {
    pseudo.push_back({{"text", p.text}, {"index", p.index}});
  }
  json info = nullptr;
  if (result.info) {
    info = {{"mode", to_string(result.info->mode)}, {"items", result.info->items}};
  }
  return {{"demos", demos},
          {"trace", trace},
          {"accepted_by_threshold", result.accepted_by_threshold},
          {"selected_attempt_nos", result.selected_attempt_nos},
          {"pseudo_problems", pseudo},
          {"info", info},
          {"phase1_empty_fallback", result.phase1_empty_fallback},
          {"target_id", result.demo_set.target_id ? json(*result.demo_set.target_id)
                                                  : json(nullptr)}};
}

}  // namespace selftaught::pipeline
