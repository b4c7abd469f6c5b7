#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selftaught/http_provider.hpp"
#include "selftaught/runner.hpp"

namespace {

using namespace selftaught;

int run_command(const cli::RunOptions& options) {
  // The http backend is assembled here so the library itself never needs a
  // network stack in tests.
  std::unique_ptr<provider::LlmProvider> injected;
  cli::Config cfg;
  if (!options.config_path.empty()) {
    cfg = cli::Config::load(std::filesystem::path(options.workdir) / options.config_path);
  }
  std::string provider_type = options.provider_type.value_or(cfg.provider.type);
  if (provider_type == "http") {
    provider::HttpProviderOptions http;
    http.base_url = cfg.provider.base_url;
    http.api_key_env = cfg.provider.api_key_env;
    http.embed_model = cfg.provider.embed_model;
    http.max_concurrency = cfg.provider.max_concurrency;
    injected = std::make_unique<provider::HttpProvider>(http);
  }
  const auto summary = cli::cmd_run(options, std::move(injected));
  std::printf("run %s: evaluated %d, skipped %d, failed %d\n", summary.run_id.c_str(),
              summary.evaluated, summary.skipped, summary.failed);
  return summary.exit_code;
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::string token;
  std::istringstream stream(csv);
  while (std::getline(stream, token, ',')) {
    if (!token.empty()) out.push_back(std::stod(token));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tailored-demonstration prompting pipelines with baselines and analyses"};
  app.require_subcommand(1);

  cli::RunOptions run_options;
  std::string variant = "full", style = "cot", provider_flag, run_id;
  int shots = 0, lambda = -1, max_attempts = 0, concurrency = 0;
  double budget = -1.0;

  auto* run = app.add_subcommand("run", "evaluate one method over one dataset");
  run->add_option("--config", run_options.config_path, "config file (JSON), relative to workdir");
  run->add_option("--workdir", run_options.workdir, "root for runs/, reports/, cache/");
  run->add_option("--dataset", run_options.dataset, "dataset name from the config")->required();
  run->add_option("--method", run_options.method,
                  "zs-direct|zs-cot|zs-ps|zs-ric|zs-roleplay|fs-direct|manual-cot|"
                  "retrieval-cot|auto-cot|selftaught");
  run->add_option("--variant", variant, "full|no-phase1|no-cf|no-both|specific-info");
  run->add_option("--solver-style", style, "direct|cot|ps");
  run->add_option("--run-tag", run_options.run_tag, "run-1|run-2|run-3");
  run->add_option("--shots", shots, "demonstrations per instance (N)");
  run->add_option("--lambda", lambda, "certainty acceptance threshold");
  run->add_option("--max-attempts", max_attempts, "certainty filtering attempt budget (t)");
  run->add_option("--provider", provider_flag, "scripted|http");
  run->add_option("--budget", budget, "hard spend cap in USD");
  run->add_option("--concurrency", concurrency, "parallel instance evaluations");
  run->add_option("--run-id", run_id, "override the derived run id");

  std::string compare_workdir = ".";
  std::vector<std::string> compare_runs;
  auto* compare = app.add_subcommand("compare", "merge runs into a method table");
  compare->add_option("--workdir", compare_workdir);
  compare->add_option("runs", compare_runs, "run ids")->required();

  std::string analyze_workdir = ".", analyze_kind, xs_csv, ys_csv;
  cli::AnalyzeOptions analyze_options;
  auto* analyze = app.add_subcommand("analyze", "pareto|regression|overlap|shots");
  analyze->add_option("--workdir", analyze_workdir);
  analyze->add_option("--kind", analyze_kind, "analysis kind")->required();
  analyze->add_option("--runs", analyze_options.run_ids, "run ids");
  analyze->add_option("--run-a", analyze_options.run_a, "first run (overlap)");
  analyze->add_option("--run-b", analyze_options.run_b, "second run (overlap)");
  analyze->add_option("--baseline", analyze_options.baseline_method,
                      "baseline method label (regression)");
  analyze->add_option("--target", analyze_options.target_method,
                      "target method label (regression)");
  analyze->add_option("--xs", xs_csv, "explicit x values, comma separated (regression)");
  analyze->add_option("--ys", ys_csv, "explicit y values, comma separated (regression)");

  std::string report_workdir = ".", report_run;
  auto* report = app.add_subcommand("report", "re-emit reports from persisted records");
  report->add_option("--workdir", report_workdir);
  report->add_option("--run-id", report_run)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      run_options.variant = variant;
      run_options.solver_style = style;
      if (!provider_flag.empty()) run_options.provider_type = provider_flag;
      if (!run_id.empty()) run_options.run_id = run_id;
      if (run->count("--shots") > 0) run_options.shots = shots;
      if (run->count("--lambda") > 0) run_options.lambda = lambda;
      if (run->count("--max-attempts") > 0) run_options.max_attempts = max_attempts;
      if (run->count("--budget") > 0) run_options.budget = budget;
      if (run->count("--concurrency") > 0) run_options.concurrency = concurrency;
      return run_command(run_options);
    }
    if (compare->parsed()) {
      const auto table = cli::cmd_compare(compare_workdir, compare_runs);
      std::fputs(table.to_text().c_str(), stdout);
      cli::write_file(std::filesystem::path(compare_workdir) / "reports" / "compare.csv",
                      table.to_csv());
      cli::write_file(std::filesystem::path(compare_workdir) / "reports" / "compare.txt",
                      table.to_text());
      return 0;
    }
    if (analyze->parsed()) {
      analyze_options.kind = analyze_kind;
      analyze_options.xs = parse_doubles(xs_csv);
      analyze_options.ys = parse_doubles(ys_csv);
      const auto result = cli::cmd_analyze(analyze_workdir, analyze_options);
      std::printf("%s\n", result.dump(2).c_str());
      return 0;
    }
    if (report->parsed()) {
      cli::emit_reports(report_workdir, report_run);
      return 0;
    }
  } catch (const cli::ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 2;
  } catch (const cli::MissingRuns& ex) {
    std::fprintf(stderr, "missing runs: %s\n", ex.what());
    return 2;
  } catch (const cli::IncompatibleRuns& ex) {
    std::fprintf(stderr, "incompatible runs: %s\n", ex.what());
    return 2;
  } catch (const datasets::FormatError& ex) {
    std::fprintf(stderr, "dataset error: %s\n", ex.what());
    return 2;
  } catch (const datasets::SizeMismatch& ex) {
    std::fprintf(stderr, "dataset error: %s\n", ex.what());
    return 2;
  } catch (const prompts::MissingTemplate& ex) {
    std::fprintf(stderr, "template error: %s\n", ex.what());
    return 2;
  } catch (const provider::TransportError& ex) {
    std::fprintf(stderr, "provider error: %s\n", ex.what());
    return 3;
  } catch (const provider::ProtocolError& ex) {
    std::fprintf(stderr, "provider error: %s\n", ex.what());
    return 3;
  } catch (const provider::BudgetExceeded& ex) {
    std::fprintf(stderr, "provider error: %s\n", ex.what());
    return 3;
  } catch (const Error& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  }
  return 0;
}
