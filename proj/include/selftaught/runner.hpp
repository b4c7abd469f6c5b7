#pragma once

#include <atomic>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "selftaught/baselines.hpp"
#include "selftaught/core.hpp"
#include "selftaught/datasets.hpp"
#include "selftaught/eval.hpp"
#include "selftaught/pipeline.hpp"
#include "selftaught/prompts.hpp"
#include "selftaught/provider.hpp"

namespace selftaught::cli {

using nlohmann::json;
namespace fs = std::filesystem;

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IncompatibleRuns : public Error {
 public:
  using Error::Error;
};

class MissingRuns : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ProviderConfig {
  std::string type{"scripted"};  // scripted | http
  std::string base_url;
  std::string api_key_env{"OPENAI_API_KEY"};
  std::string embed_model{"text-embedding-3-small"};
  std::string transcript;  // scripted transcript path, relative to workdir
  int embed_dim{8};
  int max_concurrency{4};
};

struct DatasetEntry {
  datasets::DatasetSpec spec;
  std::vector<std::string> demo_ids;        // excluded from scoring
  std::optional<std::string> manual_demos;  // path to human demonstrations
};

struct Config {
  std::string model_name{"gpt-3.5-turbo-0125"};
  double temperature{0.7};
  std::string prompts_dir{"prompts"};
  ProviderConfig provider;
  provider::PriceTable prices;
  bool cache_enabled{false};
  std::string cache_dir{"cache"};
  std::optional<double> budget;
  int concurrency{1};
  std::map<std::string, DatasetEntry> datasets;

  static Config load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& ex) {
      throw ConfigError("config is not valid JSON: " + std::string(ex.what()));
    }
    try {
      return from_json(doc);
    } catch (const json::exception& ex) {
      throw ConfigError("config schema error: " + std::string(ex.what()));
    } catch (const Error& ex) {
      throw ConfigError(std::string("config error: ") + ex.what());
    }
  }

  static Config from_json(const json& doc) {
    Config cfg;
    cfg.model_name = doc.value("model_name", cfg.model_name);
    cfg.temperature = doc.value("temperature", cfg.temperature);
    cfg.prompts_dir = doc.value("prompts_dir", cfg.prompts_dir);
    if (doc.contains("provider")) {
      const auto& p = doc.at("provider");
      cfg.provider.type = p.value("type", cfg.provider.type);
      cfg.provider.base_url = p.value("base_url", cfg.provider.base_url);
      cfg.provider.api_key_env = p.value("api_key_env", cfg.provider.api_key_env);
      cfg.provider.embed_model = p.value("embed_model", cfg.provider.embed_model);
      cfg.provider.transcript = p.value("transcript", cfg.provider.transcript);
      cfg.provider.embed_dim = p.value("embed_dim", cfg.provider.embed_dim);
      cfg.provider.max_concurrency = p.value("max_concurrency", cfg.provider.max_concurrency);
    }
    if (doc.contains("prices")) {
      for (const auto& [model, price] : doc.at("prices").items()) {
        cfg.prices[model] = {price.at("input_per_1k").get<double>(),
                             price.at("output_per_1k").get<double>()};
      }
    }
    if (doc.contains("cache")) {
      cfg.cache_enabled = doc.at("cache").value("enabled", false);
      cfg.cache_dir = doc.at("cache").value("dir", cfg.cache_dir);
    }
    if (doc.contains("budget") && !doc.at("budget").is_null()) {
      cfg.budget = doc.at("budget").get<double>();
    }
    cfg.concurrency = doc.value("concurrency", cfg.concurrency);
    if (doc.contains("datasets")) {
      for (const auto& [name, entry] : doc.at("datasets").items()) {
        DatasetEntry dataset;
        if (const auto known = datasets::catalog_lookup(name)) {
          dataset.spec = *known;
        } else {
          dataset.spec.name = name;
          dataset.spec.domain_tag = name;
        }
        dataset.spec.name = name;
        if (entry.contains("format")) {
          dataset.spec.format =
              datasets::dataset_format_from_string(entry.at("format").get<std::string>());
        }
        if (entry.contains("task_kind")) {
          dataset.spec.task_kind = task_kind_from_string(entry.at("task_kind").get<std::string>());
        }
        if (entry.contains("test_path")) {
          dataset.spec.test_path = entry.at("test_path").get<std::string>();
        }
        if (entry.contains("train_path") && !entry.at("train_path").is_null()) {
          dataset.spec.train_path = entry.at("train_path").get<std::string>();
        }
        if (entry.contains("expected_size")) {
          if (entry.at("expected_size").is_null()) {
            dataset.spec.expected_size = std::nullopt;
          } else {
            dataset.spec.expected_size = entry.at("expected_size").get<int>();
          }
        }
        if (entry.contains("domain_tag")) {
          dataset.spec.domain_tag = entry.at("domain_tag").get<std::string>();
        }
        if (entry.contains("demo_ids")) {
          for (const auto& id : entry.at("demo_ids")) {
            dataset.demo_ids.push_back(id.get<std::string>());
          }
        }
        if (entry.contains("manual_demos") && !entry.at("manual_demos").is_null()) {
          dataset.manual_demos = entry.at("manual_demos").get<std::string>();
        }
        cfg.datasets.emplace(name, std::move(dataset));
      }
    }
    return cfg;
  }
};

struct RunOptions {
  std::string config_path;
  std::string workdir{"."};
  std::string dataset;
  std::string method{"zs-cot"};
  std::string variant{"full"};
  std::string solver_style{"cot"};
  std::string run_tag{"run-1"};
  std::optional<int> shots;
  std::optional<int> lambda;
  std::optional<int> max_attempts;
  std::optional<std::string> provider_type;
  std::optional<double> budget;
  std::optional<int> concurrency;
  std::optional<std::string> run_id;
};

struct RunSummary {
  int exit_code{0};
  int evaluated{0};  // instances processed by this invocation
  int skipped{0};    // already done, left untouched
  int failed{0};     // failed after this invocation
  std::string run_id;
  fs::path run_dir;
};

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct RunManifest {
  std::string run_id;
  json config_snapshot;
  std::string config_hash;  // digests the full snapshot
  std::string group_hash;   // digests the snapshot minus the run tag
  std::string started_at;
  std::string finished_at;
  std::map<std::string, std::string> status;  // problem id -> pending|done|failed

  json to_json() const {
    return {{"run_id", run_id},
            {"config_snapshot", config_snapshot},
            {"config_hash", config_hash},
            {"group_hash", group_hash},
            {"started_at", started_at},
            {"finished_at", finished_at},
            {"status", status}};
  }

  static RunManifest from_json(const json& doc) {
    RunManifest manifest;
    manifest.run_id = doc.at("run_id").get<std::string>();
    manifest.config_snapshot = doc.at("config_snapshot");
    manifest.config_hash = doc.at("config_hash").get<std::string>();
    manifest.group_hash = doc.at("group_hash").get<std::string>();
    manifest.started_at = doc.at("started_at").get<std::string>();
    manifest.finished_at = doc.at("finished_at").get<std::string>();
    for (const auto& [id, state] : doc.at("status").items()) {
      manifest.status[id] = state.get<std::string>();
    }
    return manifest;
  }

  void save(const fs::path& path) const {
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("cannot write manifest: " + path.string());
      out << to_json().dump(2) << "\n";
    }
    fs::rename(tmp, path);
  }

  static RunManifest load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read manifest: " + path.string());
    return from_json(json::parse(in));
  }
};

// ---------------------------------------------------------------------------
// Provider stack
// ---------------------------------------------------------------------------

struct ProviderStack {
  std::unique_ptr<provider::LlmProvider> base;
  std::unique_ptr<provider::UsageLedger> ledger = std::make_unique<provider::UsageLedger>();
  std::unique_ptr<provider::AccountingProvider> accounting;
  std::unique_ptr<provider::CachingProvider> caching;
  provider::LlmProvider* top{nullptr};
  bool deterministic_clock{true};
};

namespace detail {

inline std::string now_iso(bool fixed) {
  if (fixed) return "1970-01-01T00:00:00Z";
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

inline fs::path resolve(const fs::path& workdir, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : workdir / p;
}

}  // namespace detail

// Builder functions follow; they are free so tests can assemble partial
// stacks.

inline std::unique_ptr<provider::LlmProvider> make_base_provider(const Config& cfg,
                                                                 const fs::path& workdir) {
  if (cfg.provider.type == "scripted") {
    if (cfg.provider.transcript.empty()) {
      throw ConfigError("scripted provider requires provider.transcript");
    }
    auto transcript = provider::Transcript::load(detail::resolve(workdir, cfg.provider.transcript));
    return std::make_unique<provider::ScriptedProvider>(std::move(transcript),
                                                        cfg.provider.embed_dim);
  }
  if (cfg.provider.type == "http") {
    throw ConfigError("http provider must be constructed by the CLI binary");
  }
  throw ConfigError("unknown provider type: " + cfg.provider.type);
}

/// Assembles base -> accounting(budget) -> cache. The cache sits on top so
/// hits bypass both accounting and the wire.
inline ProviderStack make_provider_stack(const Config& cfg, const fs::path& workdir,
                                         const std::string& cache_salt,
                                         std::unique_ptr<provider::LlmProvider> base = nullptr) {
  ProviderStack stack;
  if (base) {
    stack.base = std::move(base);
    stack.deterministic_clock = cfg.provider.type == "scripted";
  } else {
    stack.base = make_base_provider(cfg, workdir);
    stack.deterministic_clock = true;
  }
  stack.accounting = std::make_unique<provider::AccountingProvider>(*stack.base, cfg.prices,
                                                                    *stack.ledger, cfg.budget);
  stack.top = stack.accounting.get();
  if (cfg.cache_enabled) {
    stack.caching = std::make_unique<provider::CachingProvider>(
        *stack.accounting, detail::resolve(workdir, cfg.cache_dir), cache_salt);
    stack.top = stack.caching.get();
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Per-instance evaluation
// ---------------------------------------------------------------------------

struct MethodContext {
  MethodId method;
  RunConfig run_config;
  TaskKind task_kind{TaskKind::MultipleChoice};
  DemoSet fixed_demos;                      // FsDirect / ManualCoT / AutoCoT
  std::shared_ptr<baselines::DemoPool> pool;  // RetrievalCoT
};

struct InstanceResult {
  eval::RunRecord record;
  json trace;
  bool ok{false};
  std::string error;
  bool provider_error{false};
};

inline InstanceResult evaluate_instance(const Problem& problem, const MethodContext& ctx,
                                        const prompts::PromptRegistry& registry,
                                        provider::LlmProvider& llm, bool deterministic_clock,
                                        const std::string& trace_path) {
  InstanceResult result;
  pipeline::LlmSession session(llm, registry, ctx.run_config, ctx.task_kind);
  if (!deterministic_clock) {
    session.set_clock([] {
      return static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now().time_since_epoch())
                                   .count());
    });
  }
  json pipeline_trace = nullptr;
  try {
    pipeline::SolveResult solved;
    switch (ctx.method.kind) {
      case MethodKind::ZsDirect:
      case MethodKind::ZsCoT:
      case MethodKind::ZsPS:
      case MethodKind::ZsRiC:
      case MethodKind::ZsRolePlay:
        solved = baselines::run_zero_shot(ctx.method, problem, session);
        break;
      case MethodKind::FsDirect:
      case MethodKind::ManualCoT:
      case MethodKind::AutoCoT:
        solved = pipeline::solve_with_demonstrations(
            problem, ctx.fixed_demos, ctx.run_config.solver_style, session,
            prompts::few_shot_template_id(ctx.method.kind, ctx.task_kind));
        break;
      case MethodKind::RetrievalCoT: {
        const auto target = session.embed({baselines::demo_problem_text(problem)});
        const auto retrieved = baselines::retrieve_top_n(problem, target.front(), *ctx.pool,
                                                         ctx.run_config.filter.n_shots);
        DemoSet demos;
        demos.target_id = problem.id;
        for (const auto& pool_problem : retrieved) {
          demos.demos.push_back(baselines::annotate_rationale(
              pool_problem, ctx.run_config.solver_style, session, DemoOrigin::Retrieved));
        }
        solved = pipeline::solve_with_demonstrations(
            problem, demos, ctx.run_config.solver_style, session,
            prompts::few_shot_template_id(MethodKind::RetrievalCoT, ctx.task_kind));
        break;
      }
      case MethodKind::SelfTaught: {
        auto demos = pipeline::build_tailored_demos(problem, ctx.run_config.filter,
                                                    ctx.method.variant,
                                                    ctx.run_config.solver_style, session);
        pipeline_trace = pipeline::to_json(demos);
        solved = pipeline::solve_with_demonstrations(problem, demos.demo_set,
                                                     ctx.run_config.solver_style, session);
        break;
      }
    }
    result.record.problem_id = problem.id;
    result.record.method = method_label(ctx.method, ctx.run_config.solver_style);
    result.record.run_tag = ctx.run_config.seed_tag;
    result.record.predicted = solved.answer;
    result.record.gold = problem.gold;
    result.record.usage_total = session.usage_total();
    result.record.llm_calls = session.completions();
    result.record.trace_path = trace_path;
    result.record.model_name = ctx.run_config.model_name;
    result.ok = true;
  } catch (const provider::TransportError& ex) {
    result.error = ex.what();
    result.provider_error = true;
  } catch (const provider::ProtocolError& ex) {
    result.error = ex.what();
    result.provider_error = true;
  } catch (const provider::BudgetExceeded& ex) {
    result.error = ex.what();
    result.provider_error = true;
  } catch (const std::exception& ex) {
    result.error = ex.what();
  }

  json exchanges = json::array();
  for (const auto& exchange : session.exchanges()) {
    exchanges.push_back(pipeline::to_json(exchange));
  }
  result.trace = {{"problem_id", problem.id},
                  {"record", result.ok ? eval::to_json(result.record) : json(nullptr)},
                  {"error", result.ok ? json(nullptr) : json(result.error)},
                  {"exchanges", exchanges},
                  {"pipeline", pipeline_trace}};
  return result;
}

// ---------------------------------------------------------------------------
// Record and report I/O
// ---------------------------------------------------------------------------

inline fs::path run_dir(const fs::path& workdir, const std::string& run_id) {
  return workdir / "runs" / run_id;
}

inline fs::path report_dir(const fs::path& workdir, const std::string& run_id) {
  return workdir / "reports" / run_id;
}

inline RunManifest load_manifest(const fs::path& workdir, const std::string& run_id) {
  const fs::path path = run_dir(workdir, run_id) / "manifest.json";
  if (!fs::exists(path)) throw MissingRuns("no manifest for run: " + run_id);
  return RunManifest::load(path);
}

inline std::vector<eval::RunRecord> load_run_records(const fs::path& workdir,
                                                     const std::string& run_id) {
  const fs::path dir = run_dir(workdir, run_id);
  if (!fs::is_directory(dir)) throw MissingRuns("no run directory for: " + run_id);
  std::vector<eval::RunRecord> records;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    const std::string name = entry.path().filename().string();
    if (name == "manifest.json" || name == "_prep.json") continue;
    std::ifstream in(entry.path());
    json doc = json::parse(in);
    if (!doc.contains("record") || doc.at("record").is_null()) continue;
    records.push_back(eval::run_record_from_json(doc.at("record")));
  }
  std::sort(records.begin(), records.end(),
            [](const eval::RunRecord& a, const eval::RunRecord& b) {
              return a.problem_id < b.problem_id;
            });
  return records;
}

inline void write_file(const fs::path& path, const std::string& payload) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write: " + path.string());
  out << payload;
}

/// Re-emits reports purely from persisted records: byte-identical however
/// often it runs.
inline void emit_reports(const fs::path& workdir, const std::string& run_id) {
  const auto records = load_run_records(workdir, run_id);
  const auto manifest = load_manifest(workdir, run_id);
  const fs::path out_dir = report_dir(workdir, run_id);
  if (records.empty()) {
    write_file(out_dir / "metrics.txt", "no records\n");
    return;
  }
  const auto report = eval::score(records);
  write_file(out_dir / "metrics.txt", eval::metrics_to_text(report));
  write_file(out_dir / "metrics.csv", eval::metrics_to_csv(report));
  write_file(out_dir / "metrics.json", eval::to_json(report).dump(2) + "\n");

  provider::PriceTable prices;
  if (manifest.config_snapshot.contains("prices")) {
    for (const auto& [model, price] : manifest.config_snapshot.at("prices").items()) {
      prices[model] = {price.at("input_per_1k").get<double>(),
                       price.at("output_per_1k").get<double>()};
    }
  }
  const std::string method = records.front().method;
  if (prices.count(records.front().model_name) > 0) {
    const auto rows = eval::cost_report(records, prices, method);
    std::string csv = "method,mean_cost_per_instance,accuracy,normalized\n";
    for (const auto& row : rows) {
      csv += row.method + "," + eval::detail::fmt(row.mean_cost_per_instance, 8) + "," +
             eval::detail::fmt(row.accuracy) + "," + eval::detail::fmt(row.normalized) + "\n";
    }
    write_file(out_dir / "costs.csv", csv);
  }
}

// ---------------------------------------------------------------------------
// cmd_run
// ---------------------------------------------------------------------------

namespace detail {

inline json run_config_snapshot(const RunConfig& run_config, const datasets::DatasetSpec& spec,
                                const Config& cfg) {
  json dataset = {{"name", spec.name},
                  {"task_kind", to_string(spec.task_kind)},
                  {"format", datasets::to_string(spec.format)},
                  {"test_path", spec.test_path},
                  {"train_path", spec.train_path ? json(*spec.train_path) : json(nullptr)},
                  {"expected_size", spec.expected_size ? json(*spec.expected_size) : json(nullptr)},
                  {"domain_tag", spec.domain_tag}};
  json prices = json::object();
  for (const auto& [model, price] : cfg.prices) {
    prices[model] = {{"input_per_1k", price.input_per_1k}, {"output_per_1k", price.output_per_1k}};
  }
  return {{"method", method_label(run_config.method, run_config.solver_style)},
          {"variant", to_string(run_config.method.variant)},
          {"solver_style", to_string(run_config.solver_style)},
          {"model_name", run_config.model_name},
          {"temperature", run_config.temperature},
          {"run_tag", run_config.seed_tag},
          {"filter", {{"n_shots", run_config.filter.n_shots},
                      {"lambda", run_config.filter.lambda},
                      {"max_attempts", run_config.filter.max_attempts}}},
          {"dataset", dataset},
          {"prices", prices},
          {"provider_type", cfg.provider.type}};
}

}  // namespace detail

/// Runs one method over one dataset's evaluation split. Resumable: rerunning
/// skips instances already marked done and re-attempts pending/failed ones.
inline RunSummary cmd_run(const RunOptions& options,
                          std::unique_ptr<provider::LlmProvider> injected_provider = nullptr) {
  RunSummary summary;
  const fs::path workdir(options.workdir);

  Config cfg;
  if (!options.config_path.empty()) cfg = Config::load(detail::resolve(workdir, options.config_path));
  if (options.provider_type) cfg.provider.type = *options.provider_type;
  if (options.budget) cfg.budget = *options.budget;
  if (options.concurrency) cfg.concurrency = *options.concurrency;

  if (options.dataset.empty()) throw ConfigError("run requires --dataset");
  const auto dataset_it = cfg.datasets.find(options.dataset);
  if (dataset_it == cfg.datasets.end()) {
    throw ConfigError("dataset not configured: " + options.dataset);
  }
  // The snapshot keeps workdir-relative paths so runs hash identically
  // across machines; loading resolves against the workdir.
  DatasetEntry dataset = dataset_it->second;
  if (dataset.spec.test_path.empty()) {
    throw ConfigError("dataset has no test_path: " + options.dataset);
  }
  datasets::DatasetSpec resolved_spec = dataset.spec;
  resolved_spec.test_path = detail::resolve(workdir, dataset.spec.test_path).string();
  if (dataset.spec.train_path) {
    resolved_spec.train_path = detail::resolve(workdir, *dataset.spec.train_path).string();
  }

  RunConfig run_config;
  run_config.method = method_from_string(options.method);
  run_config.method.variant = pipeline_variant_from_string(options.variant);
  run_config.solver_style = solver_style_from_string(options.solver_style);
  run_config.model_name = cfg.model_name;
  run_config.temperature = cfg.temperature;
  run_config.seed_tag = options.run_tag;
  run_config.filter = FilterConfig::defaults_for(dataset.spec.task_kind);
  if (options.shots) run_config.filter.n_shots = *options.shots;
  if (options.lambda) run_config.filter.lambda = *options.lambda;
  if (options.max_attempts) run_config.filter.max_attempts = *options.max_attempts;
  run_config.filter.validate();

  const std::string method_name = method_label(run_config.method, run_config.solver_style);
  summary.run_id = options.run_id.value_or(options.dataset + "_" + method_name + "_" +
                                           options.run_tag);
  summary.run_dir = run_dir(workdir, summary.run_id);

  // Config snapshot and hashes; the run tag is salted into the full hash so
  // three seeded runs stay cache-independent, and excluded from the group
  // hash used for median collapsing.
  json snapshot = detail::run_config_snapshot(run_config, dataset.spec, cfg);
  const std::string config_hash = stable_hash(snapshot.dump());
  json group_snapshot = snapshot;
  group_snapshot.erase("run_tag");
  const std::string group_hash = stable_hash(group_snapshot.dump());

  prompts::PromptRegistry registry =
      prompts::PromptRegistry::load_from_dir(detail::resolve(workdir, cfg.prompts_dir));

  ProviderStack stack =
      make_provider_stack(cfg, workdir, config_hash, std::move(injected_provider));
  if (cfg.provider.type == "http") stack.deterministic_clock = false;

  // Dataset load and demo-set preparation.
  auto test_problems = datasets::load_dataset(resolved_spec);
  std::set<std::string> excluded(dataset.demo_ids.begin(), dataset.demo_ids.end());

  MethodContext ctx;
  ctx.method = run_config.method;
  ctx.run_config = run_config;
  ctx.task_kind = dataset.spec.task_kind;

  json prep_trace = nullptr;
  const auto train = datasets::load_train_split(resolved_spec);
  const bool pool_is_test = !train.has_value();
  if (ctx.method.kind == MethodKind::FsDirect || ctx.method.kind == MethodKind::ManualCoT) {
    if (!dataset.manual_demos) {
      throw ConfigError("method " + method_name + " requires datasets." + options.dataset +
                        ".manual_demos");
    }
    auto demos = baselines::load_manual_demos(detail::resolve(workdir, *dataset.manual_demos));
    if (static_cast<int>(demos.size()) < run_config.filter.n_shots) {
      throw ConfigError("manual demonstrations hold " + std::to_string(demos.size()) +
                        " entries, need " + std::to_string(run_config.filter.n_shots));
    }
    demos.resize(static_cast<std::size_t>(run_config.filter.n_shots));
    if (ctx.method.kind == MethodKind::FsDirect) demos = baselines::strip_rationales(std::move(demos));
    ctx.fixed_demos.demos = std::move(demos);
  } else if (ctx.method.kind == MethodKind::AutoCoT ||
             ctx.method.kind == MethodKind::RetrievalCoT) {
    auto pool = std::make_shared<baselines::DemoPool>();
    pool->problems = train ? *train : test_problems;
    baselines::embed_pool(*pool, *stack.top);
    if (ctx.method.kind == MethodKind::AutoCoT) {
      const auto representatives =
          baselines::select_auto_cot_demos(*pool, run_config.filter.n_shots);
      pipeline::LlmSession prep(*stack.top, registry, run_config, ctx.task_kind);
      for (const auto& representative : representatives) {
        ctx.fixed_demos.demos.push_back(baselines::annotate_rationale(
            representative, run_config.solver_style, prep, DemoOrigin::Clustered));
        if (pool_is_test) excluded.insert(representative.id);
      }
      json exchanges = json::array();
      for (const auto& exchange : prep.exchanges()) exchanges.push_back(pipeline::to_json(exchange));
      prep_trace = {{"exchanges", exchanges}};
    } else {
      ctx.pool = pool;
    }
  }

  auto [pool_split, eval_set] = datasets::split_pool_and_eval(test_problems, excluded);
  (void)pool_split;

  // Manifest: create or resume.
  fs::create_directories(summary.run_dir);
  const fs::path manifest_path = summary.run_dir / "manifest.json";
  RunManifest manifest;
  if (fs::exists(manifest_path)) {
    manifest = RunManifest::load(manifest_path);
    if (manifest.config_hash != config_hash) {
      throw ConfigError("run " + summary.run_id + " exists with a different config");
    }
  } else {
    manifest.run_id = summary.run_id;
    manifest.config_snapshot = snapshot;
    manifest.config_hash = config_hash;
    manifest.group_hash = group_hash;
    manifest.started_at = detail::now_iso(stack.deterministic_clock);
    for (const auto& problem : eval_set) manifest.status[problem.id] = "pending";
  }
  if (prep_trace != nullptr) {
    write_file(summary.run_dir / "_prep.json", prep_trace.dump(2) + "\n");
  }

  std::vector<const Problem*> todo;
  for (const auto& problem : eval_set) {
    const auto it = manifest.status.find(problem.id);
    if (it != manifest.status.end() && it->second == "done") {
      ++summary.skipped;
      continue;
    }
    todo.push_back(&problem);
  }

  std::mutex manifest_mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<int> evaluated{0};
  std::atomic<int> provider_failures{0};
  std::atomic<int> failures{0};

  auto worker = [&] {
    while (true) {
      const std::size_t index = next.fetch_add(1);
      if (index >= todo.size()) break;
      const Problem& problem = *todo[index];
      const std::string trace_rel = "runs/" + summary.run_id + "/" + problem.id + ".json";
      InstanceResult result = evaluate_instance(problem, ctx, registry, *stack.top,
                                                stack.deterministic_clock, trace_rel);
      {
        std::lock_guard lock(manifest_mutex);
        write_file(summary.run_dir / (problem.id + ".json"), result.trace.dump(2) + "\n");
        manifest.status[problem.id] = result.ok ? "done" : "failed";
        manifest.save(manifest_path);
      }
      evaluated.fetch_add(1);
      if (!result.ok) {
        failures.fetch_add(1);
        if (result.provider_error) provider_failures.fetch_add(1);
      }
    }
  };

  const int worker_count = std::max(1, cfg.concurrency);
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(worker_count));
  for (int i = 0; i < worker_count; ++i) workers.emplace_back(worker);
  for (auto& thread : workers) thread.join();

  manifest.finished_at = detail::now_iso(stack.deterministic_clock);
  manifest.save(manifest_path);
  emit_reports(workdir, summary.run_id);

  summary.evaluated = evaluated.load();
  int still_failed = 0;
  for (const auto& [id, state] : manifest.status) {
    if (state != "done") ++still_failed;
  }
  summary.failed = still_failed;
  if (still_failed == 0) {
    summary.exit_code = 0;
  } else if (failures.load() == evaluated.load() && provider_failures.load() > 0) {
    summary.exit_code = 3;  // nothing but provider errors
  } else {
    summary.exit_code = 4;  // partial failures present
  }
  return summary;
}

// ---------------------------------------------------------------------------
// cmd_compare
// ---------------------------------------------------------------------------

struct CompareRow {
  std::string label;      // method, optionally suffixed by run tag
  std::string dataset;
  double accuracy{0.0};
  int runs_collapsed{1};  // 3 when a median-of-three row
};

struct CompareReport {
  std::string dataset;
  std::vector<CompareRow> rows;

  std::string to_text() const {
    std::string out;
    char line[192];
    std::snprintf(line, sizeof(line), "%-36s %-16s %10s %6s\n", "method", "task", "acc", "runs");
    out += line;
    for (const auto& row : rows) {
      std::snprintf(line, sizeof(line), "%-36s %-16s %10.4f %6d\n", row.label.c_str(),
                    row.dataset.c_str(), row.accuracy, row.runs_collapsed);
      out += line;
    }
    return out;
  }

  std::string to_csv() const {
    std::string out = "method,task,accuracy,runs\n";
    for (const auto& row : rows) {
      out += row.label + "," + row.dataset + "," + eval::detail::fmt(row.accuracy) + "," +
             std::to_string(row.runs_collapsed) + "\n";
    }
    return out;
  }
};

/// Merges runs over one dataset into a method table; three run tags sharing
/// a config collapse into a single median row.
inline CompareReport cmd_compare(const fs::path& workdir,
                                 const std::vector<std::string>& run_ids) {
  if (run_ids.empty()) throw MissingRuns("compare requires run ids");
  struct Loaded {
    RunManifest manifest;
    double accuracy;
    std::string method;
    std::string dataset;
    std::string run_tag;
  };
  std::vector<Loaded> loaded;
  for (const auto& run_id : run_ids) {
    Loaded entry;
    entry.manifest = load_manifest(workdir, run_id);
    const auto records = load_run_records(workdir, run_id);
    if (records.empty()) throw MissingRuns("run has no records: " + run_id);
    entry.accuracy = eval::score(records).accuracy;
    entry.method = entry.manifest.config_snapshot.at("method").get<std::string>();
    entry.dataset =
        entry.manifest.config_snapshot.at("dataset").at("name").get<std::string>();
    entry.run_tag = entry.manifest.config_snapshot.at("run_tag").get<std::string>();
    loaded.push_back(std::move(entry));
  }
  const std::string dataset = loaded.front().dataset;
  for (const auto& entry : loaded) {
    if (entry.dataset != dataset) {
      throw IncompatibleRuns("runs cover different datasets: " + dataset + " vs " +
                             entry.dataset);
    }
  }

  std::map<std::string, std::vector<const Loaded*>> groups;  // group hash + method
  for (const auto& entry : loaded) {
    groups[entry.manifest.group_hash + "|" + entry.method].push_back(&entry);
  }
  CompareReport report;
  report.dataset = dataset;
  for (const auto& [key, group] : groups) {
    std::set<std::string> tags;
    for (const auto* entry : group) tags.insert(entry->run_tag);
    if (group.size() == 3 && tags.size() == 3) {
      std::vector<double> accuracies;
      for (const auto* entry : group) accuracies.push_back(entry->accuracy);
      report.rows.push_back(
          {group.front()->method, dataset, eval::median_of_runs(accuracies), 3});
    } else {
      for (const auto* entry : group) {
        report.rows.push_back(
            {entry->method + " (" + entry->run_tag + ")", dataset, entry->accuracy, 1});
      }
    }
  }
  std::sort(report.rows.begin(), report.rows.end(),
            [](const CompareRow& a, const CompareRow& b) { return a.label < b.label; });
  return report;
}

// ---------------------------------------------------------------------------
// cmd_analyze
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
  std::string kind;  // pareto | regression | overlap | shots
  std::vector<std::string> run_ids;
  std::string run_a;  // overlap
  std::string run_b;
  std::string baseline_method;  // regression over runs
  std::string target_method;
  std::vector<double> xs;  // regression over explicit data
  std::vector<double> ys;
};

namespace detail {

inline provider::PriceTable prices_from_snapshot(const json& snapshot) {
  provider::PriceTable prices;
  if (snapshot.contains("prices")) {
    for (const auto& [model, price] : snapshot.at("prices").items()) {
      prices[model] = {price.at("input_per_1k").get<double>(),
                       price.at("output_per_1k").get<double>()};
    }
  }
  return prices;
}

}  // namespace detail

inline json cmd_analyze(const fs::path& workdir, const AnalyzeOptions& options) {
  json result;
  if (options.kind == "pareto") {
    if (options.run_ids.empty()) throw MissingRuns("pareto requires run ids");
    std::vector<eval::CostPoint> points;
    for (const auto& run_id : options.run_ids) {
      const auto manifest = load_manifest(workdir, run_id);
      const auto records = load_run_records(workdir, run_id);
      if (records.empty()) throw MissingRuns("run has no records: " + run_id);
      const auto prices = detail::prices_from_snapshot(manifest.config_snapshot);
      const auto rows = eval::cost_report(records, prices, records.front().method);
      for (const auto& row : rows) {
        points.push_back({row.method, row.mean_cost_per_instance, row.accuracy});
      }
    }
    const auto frontier = eval::pareto_frontier(points);
    json points_json = json::array();
    for (const auto& p : points) {
      points_json.push_back(
          {{"method", p.method}, {"cost", p.mean_cost_per_instance}, {"accuracy", p.accuracy}});
    }
    json frontier_json = json::array();
    for (const auto& p : frontier) {
      frontier_json.push_back(
          {{"method", p.method}, {"cost", p.mean_cost_per_instance}, {"accuracy", p.accuracy}});
    }
    result = {{"points", points_json}, {"frontier", frontier_json}};
  } else if (options.kind == "regression") {
    std::vector<double> xs = options.xs;
    std::vector<double> ys = options.ys;
    if (xs.empty()) {
      // Derive (baseline accuracy, improvement) pairs per dataset from runs.
      if (options.baseline_method.empty() || options.target_method.empty()) {
        throw ConfigError("regression over runs requires baseline and target methods");
      }
      std::map<std::string, std::map<std::string, std::vector<double>>> by_dataset;
      for (const auto& run_id : options.run_ids) {
        const auto manifest = load_manifest(workdir, run_id);
        const auto records = load_run_records(workdir, run_id);
        if (records.empty()) continue;
        const std::string dataset =
            manifest.config_snapshot.at("dataset").at("name").get<std::string>();
        const std::string method = manifest.config_snapshot.at("method").get<std::string>();
        by_dataset[dataset][method].push_back(eval::score(records).accuracy);
      }
      for (const auto& [dataset, methods] : by_dataset) {
        const auto base = methods.find(options.baseline_method);
        const auto target = methods.find(options.target_method);
        if (base == methods.end() || target == methods.end()) continue;
        const double x = eval::median_of_runs(base->second);
        const double y = eval::median_of_runs(target->second) - x;
        xs.push_back(x);
        ys.push_back(y);
      }
      if (xs.size() < 2) throw MissingRuns("regression needs two or more datasets");
    }
    const auto [beta, intercept] = eval::ols_slope(xs, ys);
    result = {{"beta", beta}, {"intercept", intercept}, {"xs", xs}, {"ys", ys}};
  } else if (options.kind == "overlap") {
    const auto records_a = load_run_records(workdir, options.run_a);
    const auto records_b = load_run_records(workdir, options.run_b);
    const auto overlap = eval::overlap_analysis(records_a, records_b);
    result = {{"both_correct", overlap.both_correct},
              {"only_a", overlap.only_a},
              {"only_b", overlap.only_b},
              {"both_wrong", overlap.both_wrong},
              {"rate_a_correct_given_b_wrong", overlap.rate_a_correct_given_b_wrong}};
  } else if (options.kind == "shots") {
    if (options.run_ids.empty()) throw MissingRuns("shots requires run ids");
    std::map<int, std::vector<double>> by_shots;
    for (const auto& run_id : options.run_ids) {
      const auto manifest = load_manifest(workdir, run_id);
      const auto records = load_run_records(workdir, run_id);
      if (records.empty()) continue;
      const int shots =
          manifest.config_snapshot.at("filter").at("n_shots").get<int>();
      by_shots[shots].push_back(eval::score(records).accuracy);
    }
    if (by_shots.empty()) throw MissingRuns("no usable runs for shot sweep");
    json table = json::array();
    for (const auto& [shots, accuracies] : by_shots) {
      table.push_back({{"n_shots", shots}, {"accuracy", eval::median_of_runs(accuracies)}});
    }
    result = {{"table", table}};
  } else {
    throw ConfigError("unknown analysis kind: " + options.kind);
  }

  // Merge into reports/analysis.json so repeated invocations accumulate.
  const fs::path path = workdir / "reports" / "analysis.json";
  json merged = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    merged = json::parse(in);
  }
  merged[options.kind] = result;
  write_file(path, merged.dump(2) + "\n");
  return result;
}

}  // namespace selftaught::cli
