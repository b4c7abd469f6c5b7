// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exits nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "selftaught/baselines.hpp"
#include "selftaught/datasets.hpp"
#include "selftaught/eval.hpp"
#include "selftaught/http_provider.hpp"
#include "selftaught/pipeline.hpp"
#include "selftaught/runner.hpp"

using namespace selftaught;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& message) {
  if (!condition) throw CheckFailure(message);
}

void criterion(int number, const std::string& title, const std::function<void()>& body) {
  try {
    body();
    std::printf("[PASS] C%-2d %s\n", number, title.c_str());
  } catch (const std::exception& ex) {
    ++g_failures;
    std::printf("[FAIL] C%-2d %s: %s\n", number, title.c_str(), ex.what());
  }
}

const prompts::PromptRegistry& registry() {
  static const auto instance = prompts::PromptRegistry::load_from_dir(SELFTAUGHT_PROMPTS_DIR);
  return instance;
}

RunConfig test_config() {
  RunConfig cfg;
  cfg.model_name = "test-model";
  return cfg;
}

provider::Transcript from_replies(const std::vector<std::string>& replies) {
  provider::Transcript transcript;
  for (const auto& reply : replies) transcript.entries.push_back({std::nullopt, reply});
  return transcript;
}

std::string cs_reply(int cs) {
  return "Reasoning text.\nFinal Answer: A\nCertainty: " + std::to_string(cs);
}

Problem sample_problem() {
  return testing::make_toy_dataset(1, TaskKind::MultipleChoice, 77)[0];
}

// --------------------------------------------------------------------------
// C1 / C2 helpers
// --------------------------------------------------------------------------

void check_cs_sequence(const std::vector<int>& sequence, int expected_calls, int expected_cs) {
  std::vector<std::string> replies;
  for (const int cs : sequence) replies.push_back(cs_reply(cs));
  provider::ScriptedProvider llm(from_replies(replies));
  pipeline::LlmSession session(llm, registry(), test_config(), TaskKind::MultipleChoice);
  FilterConfig cfg;  // N=3, lambda=90, t=5
  const auto outcome =
      pipeline::certainty_filter_loop({"pseudo", 1}, cfg, SolverStyle::CoT, session);
  require(session.completions() == expected_calls,
          "expected " + std::to_string(expected_calls) + " calls, made " +
              std::to_string(session.completions()));
  const auto& selected =
      outcome.attempts[static_cast<std::size_t>(outcome.selected_attempt_no - 1)];
  require(selected.cs.has_value() && *selected.cs == expected_cs,
          "expected selected cs " + std::to_string(expected_cs));
}

std::vector<std::string> selftaught_replies(int n_shots, const std::string& final_letter) {
  std::vector<std::string> replies = {"1. key knowledge"};
  std::string batch;
  for (int i = 1; i <= n_shots; ++i) {
    batch += "Problem " + std::to_string(i) + ": pseudo problem " + std::to_string(i);
    if (i < n_shots) batch += "\n";
  }
  replies.push_back(batch);
  for (int i = 0; i < n_shots; ++i) replies.push_back(cs_reply(95));
  replies.push_back("Therefore, the answer is (" + final_letter + ").");
  return replies;
}

int run_instance_call_count(PipelineVariant variant, int n) {
  std::vector<std::string> replies;
  if (variant == PipelineVariant::Full || variant == PipelineVariant::NoCF) {
    replies.push_back("1. item");
  }
  std::string batch;
  for (int i = 1; i <= n; ++i) {
    batch += "Problem " + std::to_string(i) + ": p" + std::to_string(i);
    if (i < n) batch += "\n";
  }
  replies.push_back(batch);
  for (int i = 0; i < n; ++i) {
    replies.push_back(variant == PipelineVariant::NoCF || variant == PipelineVariant::NoBoth
                          ? "Solution.\nFinal Answer: A"
                          : cs_reply(95));
  }
  replies.push_back("The answer is (A).");
  provider::ScriptedProvider llm(from_replies(replies));
  pipeline::LlmSession session(llm, registry(), test_config(), TaskKind::MultipleChoice);
  const auto demos = pipeline::build_tailored_demos(sample_problem(), FilterConfig{}, variant,
                                                    SolverStyle::CoT, session);
  pipeline::solve_with_demonstrations(sample_problem(), demos.demo_set, SolverStyle::CoT,
                                      session);
  return session.completions();
}

// --------------------------------------------------------------------------
// C4 oracle
// --------------------------------------------------------------------------

struct BruteMetrics {
  double weighted_precision{0}, weighted_recall{0}, weighted_f1{0};
};

BruteMetrics brute_force_metrics(const std::vector<eval::RunRecord>& records) {
  BruteMetrics out;
  std::set<std::string> classes;
  for (const auto& record : records) {
    classes.insert(record.gold.value);
    if (record.predicted) classes.insert(record.predicted->value);
  }
  const double n = static_cast<double>(records.size());
  for (const auto& label : classes) {
    double tp = 0, fp = 0, fn = 0, support = 0;
    for (const auto& record : records) {
      const bool g = record.gold.value == label;
      const bool p = record.predicted && record.predicted->value == label;
      if (g) ++support;
      if (g && p) ++tp;
      if (!g && p) ++fp;
      if (g && !p) ++fn;
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    out.weighted_precision += (support / n) * precision;
    out.weighted_recall += (support / n) * recall;
    out.weighted_f1 += (support / n) * f1;
  }
  return out;
}

eval::RunRecord quick_record(const std::string& id, const std::string& gold,
                             std::optional<std::string> predicted) {
  eval::RunRecord record;
  record.problem_id = id;
  record.method = "m";
  record.run_tag = "run-1";
  record.gold = AnswerLabel{gold};
  if (predicted) record.predicted = AnswerLabel{*predicted};
  record.model_name = "test-model";
  return record;
}

// --------------------------------------------------------------------------
// C5 oracle
// --------------------------------------------------------------------------

std::pair<double, std::vector<int>> brute_force_two_partition(
    const std::vector<provider::EmbeddingVector>& points) {
  const std::size_t n = points.size();
  double best_sse = std::numeric_limits<double>::max();
  std::vector<int> best;
  for (unsigned mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::vector<int> assignment(n, 0);
    for (std::size_t i = 1; i < n; ++i) assignment[i] = (mask >> (i - 1)) & 1u;
    bool has[2] = {false, false};
    for (const int a : assignment) has[a] = true;
    if (!has[0] || !has[1]) continue;
    double sse = 0.0;
    for (int c = 0; c < 2; ++c) {
      std::vector<double> mean(points[0].values.size(), 0.0);
      int count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assignment[i] != c) continue;
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += points[i].values[d];
        ++count;
      }
      for (auto& v : mean) v /= count;
      for (std::size_t i = 0; i < n; ++i) {
        if (assignment[i] != c) continue;
        for (std::size_t d = 0; d < mean.size(); ++d) {
          const double diff = points[i].values[d] - mean[d];
          sse += diff * diff;
        }
      }
    }
    if (sse < best_sse) {
      best_sse = sse;
      best = assignment;
    }
  }
  return {best_sse, best};
}

std::set<std::set<std::size_t>> as_partition(const std::vector<int>& assignment) {
  std::map<int, std::set<std::size_t>> groups;
  for (std::size_t i = 0; i < assignment.size(); ++i) groups[assignment[i]].insert(i);
  std::set<std::set<std::size_t>> out;
  for (auto& [c, members] : groups) out.insert(std::move(members));
  return out;
}

// --------------------------------------------------------------------------
// C9 / C10 helpers
// --------------------------------------------------------------------------

std::string jsonl_for(const std::vector<Problem>& problems) {
  std::string out;
  for (const auto& problem : problems) {
    nlohmann::json options = nlohmann::json::object();
    for (const auto& option : problem.options) options[option.label] = option.text;
    out += nlohmann::json({{"question", problem.stem},
                           {"options", options},
                           {"answer", problem.gold.value}})
               .dump() +
           "\n";
  }
  return out;
}

void setup_workbench(const fs::path& dir, const std::vector<Problem>& problems) {
  testing::write_text(dir / "toy.jsonl", jsonl_for(problems));
  nlohmann::json config = {
      {"model_name", "test-model"},
      {"prompts_dir", SELFTAUGHT_PROMPTS_DIR},
      {"provider", {{"type", "scripted"}, {"transcript", "transcript.json"}}},
      {"prices", {{"test-model", {{"input_per_1k", 0.5}, {"output_per_1k", 1.5}}}}},
      {"concurrency", 1},
      {"datasets",
       {{"toy",
         {{"format", "jsonl"},
          {"task_kind", "multiple-choice"},
          {"test_path", "toy.jsonl"},
          {"expected_size", static_cast<int>(problems.size())},
          {"domain_tag", "toy"}}}}}};
  testing::write_text(dir / "config.json", config.dump(2));
}

void save_transcript(const fs::path& dir, const std::vector<std::string>& replies) {
  from_replies(replies).save(dir / "transcript.json");
}

cli::RunOptions run_options(const fs::path& dir, const std::string& method,
                            const std::string& run_id) {
  cli::RunOptions options;
  options.config_path = "config.json";
  options.workdir = dir.string();
  options.dataset = "toy";
  options.method = method;
  options.run_id = run_id;
  return options;
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> tree;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    tree[fs::relative(entry.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), {});
  }
  return tree;
}

void run_three_methods(const fs::path& dir, const std::vector<Problem>& problems) {
  setup_workbench(dir, problems);
  std::vector<std::string> direct, cot, taught;
  for (const auto& problem : problems) {
    direct.push_back(problem.gold.value);
    cot.push_back("Thinking it through... the answer is (" + problem.gold.value + ").");
    const auto instance = selftaught_replies(3, problem.gold.value);
    taught.insert(taught.end(), instance.begin(), instance.end());
  }
  save_transcript(dir, direct);
  require(cli::cmd_run(run_options(dir, "zs-direct", "run-direct")).exit_code == 0,
          "zs-direct run failed");
  save_transcript(dir, cot);
  require(cli::cmd_run(run_options(dir, "zs-cot", "run-cot")).exit_code == 0,
          "zs-cot run failed");
  save_transcript(dir, taught);
  require(cli::cmd_run(run_options(dir, "selftaught", "run-selftaught")).exit_code == 0,
          "selftaught run failed");
}

}  // namespace

int main() {
  criterion(1, "certainty-loop exactness on the three pinned sequences", [] {
    const auto start = std::chrono::steady_clock::now();
    check_cs_sequence({50, 70, 95}, 3, 95);
    check_cs_sequence({10, 20, 30, 20, 10}, 5, 30);
    check_cs_sequence({90}, 1, 90);
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    require(elapsed < 1000, "took " + std::to_string(elapsed) + " ms");
  });

  criterion(2, "call-count budget per variant (N=3)", [] {
    require(run_instance_call_count(PipelineVariant::Full, 3) == 1 + 1 + 3 + 1,
            "Full variant call count off");
    require(run_instance_call_count(PipelineVariant::NoCF, 3) == 3 + 3,
            "NoCF variant call count off");
    require(run_instance_call_count(PipelineVariant::NoBoth, 3) == 1 + 3 + 1,
            "NoBoth variant call count off");
  });

  criterion(3, "empty demo set degenerates to the zero-shot CoT prompt", [] {
    const auto problem = sample_problem();
    provider::ScriptedProvider llm(from_replies({"x"}));
    pipeline::LlmSession session(llm, registry(), test_config(), TaskKind::MultipleChoice);
    pipeline::solve_with_demonstrations(problem, DemoSet{}, SolverStyle::CoT, session);
    const auto zero_shot =
        registry().render("zeroshot-cot.qa", prompts::problem_bindings(problem));
    require(session.exchanges().at(0).request_messages == zero_shot.messages,
            "prompts differ");
  });

  criterion(4, "weighted metric oracle on 200 random sets and the worked example", [] {
    std::mt19937 rng(4242);
    static const char* labels[] = {"AD", "MCI", "Normal"};
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 2 + static_cast<int>(rng() % 60);
      std::vector<eval::RunRecord> records;
      for (int i = 0; i < n; ++i) {
        std::optional<std::string> predicted;
        if (rng() % 8 != 0) predicted = labels[rng() % 3];
        records.push_back(quick_record("p" + std::to_string(i), labels[rng() % 3], predicted));
      }
      const auto report = eval::score(records);
      const auto oracle = brute_force_metrics(records);
      require(std::abs(report.weighted_precision - oracle.weighted_precision) <= 1e-12,
              "weighted precision off at trial " + std::to_string(trial));
      require(std::abs(report.weighted_recall - oracle.weighted_recall) <= 1e-12,
              "weighted recall off at trial " + std::to_string(trial));
      require(std::abs(report.weighted_f1 - oracle.weighted_f1) <= 1e-12,
              "weighted F1 off at trial " + std::to_string(trial));
    }
    const std::vector<eval::RunRecord> worked = {
        quick_record("1", "AD", "AD"), quick_record("2", "AD", "MCI"),
        quick_record("3", "MCI", "MCI"), quick_record("4", "Normal", "Normal")};
    require(eval::score(worked).weighted_f1 == 0.75, "worked example not exactly 0.75");
  });

  criterion(5, "clustering matches the exhaustive minimum-SSE oracle on 50 blob pairs", [] {
    std::mt19937 rng(555);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    for (int trial = 0; trial < 50; ++trial) {
      const int per_blob = 2 + static_cast<int>(rng() % 5);  // <= 12 points
      std::vector<provider::EmbeddingVector> points;
      for (int i = 0; i < per_blob; ++i) {
        points.push_back(provider::EmbeddingVector{{jitter(rng), jitter(rng)}});
      }
      for (int i = 0; i < per_blob; ++i) {
        points.push_back(provider::EmbeddingVector{{100.0 + jitter(rng), 100.0 + jitter(rng)}});
      }
      const auto model = baselines::kmeans(points, 2);
      const auto [best_sse, best_assignment] = brute_force_two_partition(points);
      require(as_partition(model.assignment) == as_partition(best_assignment),
              "partition mismatch at trial " + std::to_string(trial));

      baselines::DemoPool pool;
      pool.problems = testing::make_toy_dataset(static_cast<int>(points.size()),
                                                TaskKind::MultipleChoice,
                                                1000 + static_cast<unsigned>(trial));
      pool.embeddings = points;
      const auto demos = baselines::select_auto_cot_demos(pool, 2);
      // Expected representatives: per brute-force cluster, the point nearest
      // its mean (ties to the lowest index).
      for (int c = 0; c < 2; ++c) {
        std::vector<double> mean(2, 0.0);
        int count = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          if (best_assignment[i] != c) continue;
          mean[0] += points[i].values[0];
          mean[1] += points[i].values[1];
          ++count;
        }
        mean[0] /= count;
        mean[1] /= count;
        double best_dist = std::numeric_limits<double>::max();
        std::size_t best_index = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          if (best_assignment[i] != c) continue;
          const double dx = points[i].values[0] - mean[0];
          const double dy = points[i].values[1] - mean[1];
          if (dx * dx + dy * dy < best_dist) {
            best_dist = dx * dx + dy * dy;
            best_index = i;
          }
        }
        const std::string expected_id = pool.problems[best_index].id;
        const bool found = std::any_of(demos.begin(), demos.end(), [&](const Problem& p) {
          return p.id == expected_id;
        });
        require(found, "representative mismatch at trial " + std::to_string(trial));
      }
    }
  });

  criterion(6, "retrieval matches the brute-force ranking on 100 random pools", [] {
    std::mt19937 rng(666);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 3 + static_cast<int>(rng() % 18);  // <= 20 items
      baselines::DemoPool pool;
      pool.problems = testing::make_toy_dataset(n, TaskKind::MultipleChoice,
                                                2000 + static_cast<unsigned>(trial));
      for (int i = 0; i < n; ++i) {
        pool.embeddings.push_back(provider::EmbeddingVector{{dist(rng), dist(rng), dist(rng)}});
      }
      const std::size_t target_index = rng() % static_cast<std::size_t>(n);
      const auto target = pool.problems[target_index];
      const auto& target_embedding = pool.embeddings[target_index];
      const int want = 1 + static_cast<int>(rng() % static_cast<unsigned>(n - 1));

      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t i = 0; i < pool.problems.size(); ++i) {
        if (pool.problems[i].id == target.id) continue;
        scored.emplace_back(baselines::cosine_similarity(target_embedding, pool.embeddings[i]),
                            i);
      }
      std::stable_sort(scored.begin(), scored.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      const auto got = baselines::retrieve_top_n(target, target_embedding, pool, want);
      require(got.size() == static_cast<std::size_t>(want), "result size off");
      for (int i = 0; i < want; ++i) {
        require(got[static_cast<std::size_t>(i)].id ==
                    pool.problems[scored[static_cast<std::size_t>(i)].second].id,
                "ranking mismatch at trial " + std::to_string(trial));
      }
    }
  });

  criterion(7, "pareto, regression and overlap oracles", [] {
    std::mt19937 rng(777);
    std::uniform_real_distribution<double> cost(0.0, 10.0);
    std::uniform_real_distribution<double> acc(0.0, 100.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<eval::CostPoint> points;
      const int n = 1 + static_cast<int>(rng() % 12);
      for (int i = 0; i < n; ++i) points.push_back({"m" + std::to_string(i), cost(rng), acc(rng)});
      const auto frontier = eval::pareto_frontier(points);
      for (const auto& p : points) {
        bool dominated = false;
        for (const auto& q : points) {
          const bool weak = q.mean_cost_per_instance <= p.mean_cost_per_instance &&
                            q.accuracy >= p.accuracy;
          const bool strict = q.mean_cost_per_instance < p.mean_cost_per_instance ||
                              q.accuracy > p.accuracy;
          if (weak && strict) {
            dominated = true;
            break;
          }
        }
        const bool kept = std::any_of(frontier.begin(), frontier.end(), [&](const auto& q) {
          return q.mean_cost_per_instance == p.mean_cost_per_instance &&
                 q.accuracy == p.accuracy;
        });
        require(kept == !dominated, "dominance mismatch at trial " + std::to_string(trial));
      }
    }

    const auto fit = eval::ols_slope({1, 2, 3}, {2, 2, 5});
    require(std::abs(fit.first - 1.5) <= 1e-12, "beta != 1.5 on the fixed 3-point case");
    const auto collinear = eval::ols_slope({0, 1, 2, 3}, {5, 8, 11, 14});
    require(std::abs(collinear.first - 3.0) <= 1e-12, "collinear slope inexact");
    require(std::abs(collinear.second - 5.0) <= 1e-12, "collinear intercept inexact");

    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + static_cast<int>(rng() % 40);
      std::vector<eval::RunRecord> a, b;
      for (int i = 0; i < n; ++i) {
        a.push_back(quick_record("p" + std::to_string(i), "A", rng() % 2 ? "A" : "B"));
        b.push_back(quick_record("p" + std::to_string(i), "A", rng() % 2 ? "A" : "B"));
      }
      require(eval::overlap_analysis(a, b).universe() == n, "overlap counts do not sum");
    }
  });

  criterion(8, "dataset size gates reject mismatches and accept matching fixtures", [] {
    testing::TempDir tmp;
    // Synthetic fixtures matching the registered benchmark sizes.
    const auto make_csv = [&](const std::string& name, int rows) {
      std::string csv;
      for (int i = 0; i < rows; ++i) {
        csv += "Question " + std::to_string(i) + "?,a,b,c,d,A\n";
      }
      const auto path = tmp.path() / (name + ".csv");
      testing::write_text(path, csv);
      return path;
    };
    datasets::DatasetSpec phys = *datasets::catalog_lookup("college-phys");
    phys.test_path = make_csv("phys", 102).string();
    require(datasets::load_dataset(phys).size() == 102, "college-phys fixture rejected");

    datasets::DatasetSpec law = *datasets::catalog_lookup("pro-law");
    law.test_path = make_csv("law", 1534).string();
    require(datasets::load_dataset(law).size() == 1534, "pro-law fixture rejected");

    datasets::DatasetSpec bad = phys;
    bad.test_path = make_csv("short", 101).string();
    bool rejected = false;
    try {
      datasets::load_dataset(bad);
    } catch (const datasets::SizeMismatch&) {
      rejected = true;
    }
    require(rejected, "mismatched count was accepted");
  });

  criterion(9, "two scripted end-to-end runs are byte-identical (3 methods x 5 problems)", [] {
    const auto problems = testing::make_toy_dataset(5, TaskKind::MultipleChoice, 99);
    testing::TempDir dir_a, dir_b;
    run_three_methods(dir_a.path(), problems);
    run_three_methods(dir_b.path(), problems);
    const auto runs_a = snapshot_tree(dir_a.path() / "runs");
    const auto runs_b = snapshot_tree(dir_b.path() / "runs");
    require(!runs_a.empty(), "no run output produced");
    require(runs_a == runs_b, "run directories differ");
    const auto reports_a = snapshot_tree(dir_a.path() / "reports");
    const auto reports_b = snapshot_tree(dir_b.path() / "reports");
    require(!reports_a.empty(), "no reports produced");
    require(reports_a == reports_b, "reports differ");
  });

  criterion(10, "interrupting after k of n and rerunning evaluates exactly n-k", [] {
    const int n = 6, k = 2;
    const auto problems = testing::make_toy_dataset(n, TaskKind::MultipleChoice, 13);
    testing::TempDir dir;
    setup_workbench(dir.path(), problems);
    std::vector<std::string> first;
    for (int i = 0; i < k; ++i) first.push_back(problems[static_cast<std::size_t>(i)].gold.value);
    save_transcript(dir.path(), first);
    const auto interrupted = cli::cmd_run(run_options(dir.path(), "zs-direct", "resume-run"));
    require(interrupted.failed == n - k, "unexpected failure count after interruption");

    std::vector<std::string> rest;
    for (int i = k; i < n; ++i) rest.push_back(problems[static_cast<std::size_t>(i)].gold.value);
    save_transcript(dir.path(), rest);
    const auto resumed = cli::cmd_run(run_options(dir.path(), "zs-direct", "resume-run"));
    require(resumed.skipped == k, "done instances were re-evaluated");
    require(resumed.evaluated == n - k,
            "expected " + std::to_string(n - k) + " evaluations, got " +
                std::to_string(resumed.evaluated));
    require(resumed.exit_code == 0, "resumed run did not finish clean");
  });

  // Optional live smoke check, gated on an explicitly configured endpoint.
  const char* live_base = std::getenv("SELFTAUGHT_LIVE_BASE_URL");
  if (live_base == nullptr || std::string(live_base).empty()) {
    std::printf("[SKIP] C11 live 20-instance smoke check (set SELFTAUGHT_LIVE_BASE_URL, "
                "SELFTAUGHT_LIVE_DATA, SELFTAUGHT_LIVE_MODEL to enable)\n");
  } else {
    criterion(11, "live smoke: 20 instances, three methods, parse failures < 10%", [&] {
      const char* data = std::getenv("SELFTAUGHT_LIVE_DATA");
      require(data != nullptr, "SELFTAUGHT_LIVE_DATA (BIG-bench JSON) is required");
      const char* model = std::getenv("SELFTAUGHT_LIVE_MODEL");
      testing::TempDir dir;
      datasets::DatasetSpec spec = *datasets::catalog_lookup("strategyqa");
      spec.test_path = data;
      spec.expected_size = std::nullopt;
      auto problems = datasets::load_dataset(spec);
      require(problems.size() >= 20, "need at least 20 instances");
      problems.resize(20);

      nlohmann::json config = {
          {"model_name", model ? model : "gpt-3.5-turbo-0125"},
          {"prompts_dir", SELFTAUGHT_PROMPTS_DIR},
          {"provider", {{"type", "http"}, {"base_url", live_base}}},
          {"prices", {{model ? model : "gpt-3.5-turbo-0125",
                       {{"input_per_1k", 0.0005}, {"output_per_1k", 0.0015}}}}},
          {"cache", {{"enabled", true}}},
          {"concurrency", 4},
          {"datasets", {{"toy", {{"format", "bigbench-json"},
                                 {"task_kind", "yes-no"},
                                 {"test_path", "sample.json"},
                                 {"expected_size", 20},
                                 {"domain_tag", "strategyqa"}}}}}};
      testing::write_text(dir.path() / "config.json", config.dump(2));
      nlohmann::json examples = nlohmann::json::array();
      for (const auto& problem : problems) {
        examples.push_back({{"input", problem.stem},
                            {"target_scores",
                             {{"Yes", problem.gold.value == "Yes" ? 1.0 : 0.0},
                              {"No", problem.gold.value == "No" ? 1.0 : 0.0}}}});
      }
      testing::write_text(dir.path() / "sample.json",
                          nlohmann::json({{"examples", examples}}).dump());

      for (const std::string method : {"zs-direct", "zs-cot", "selftaught"}) {
        auto options = run_options(dir.path(), method, "live-" + method);
        cli::Config cfg = cli::Config::load(dir.path() / "config.json");
        provider::HttpProviderOptions http;
        http.base_url = cfg.provider.base_url;
        http.api_key_env = cfg.provider.api_key_env;
        http.embed_model = cfg.provider.embed_model;
        auto injected = std::make_unique<provider::HttpProvider>(http);
        const auto summary = cli::cmd_run(options, std::move(injected));
        require(summary.exit_code == 0, method + " run failed");
        const auto records = cli::load_run_records(dir.path(), summary.run_id);
        const auto report = eval::score(records);
        require(report.parse_failure_rate < 0.10,
                method + " parse failure rate " + std::to_string(report.parse_failure_rate));
        require(fs::exists(cli::report_dir(dir.path(), summary.run_id) / "costs.csv"),
                method + " cost report missing");
      }
    });
  }

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
