#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selftaught/core.hpp"
#include "selftaught/pipeline.hpp"
#include "selftaught/prompts.hpp"
#include "selftaught/provider.hpp"

namespace selftaught::baselines {

class ZeroVector : public Error {
 public:
  using Error::Error;
};

class PoolTooSmall : public Error {
 public:
  using Error::Error;
};

class InvalidK : public Error {
 public:
  using Error::Error;
};

/// Candidate problems for few-shot demonstrations: the training split, or
/// the test split when no training data ships with the task.
struct DemoPool {
  std::vector<Problem> problems;
  std::vector<provider::EmbeddingVector> embeddings;  // empty until embedded

  bool embedded() const { return embeddings.size() == problems.size() && !problems.empty(); }
};

/// Full problem text as presented inside a demonstration (stem plus option
/// block); also the text fed to the embedding provider.
inline std::string demo_problem_text(const Problem& problem) {
  std::string text = problem.stem;
  std::string options = prompts::render_options(problem);
  if (!options.empty()) {
    if (!options.empty() && options.back() == '\n') options.pop_back();
    text += "\n" + options;
  }
  return text;
}

inline void embed_pool(DemoPool& pool, provider::LlmProvider& llm) {
  if (pool.problems.empty()) throw Error("cannot embed an empty pool");
  std::vector<std::string> texts;
  texts.reserve(pool.problems.size());
  for (const auto& problem : pool.problems) texts.push_back(demo_problem_text(problem));
  pool.embeddings = llm.embed(texts);
}

// ---------------------------------------------------------------------------
// Zero-shot strategies
// ---------------------------------------------------------------------------

inline pipeline::SolveResult run_zero_shot(const MethodId& method, const Problem& problem,
                                           pipeline::LlmSession& session) {
  if (!method.is_zero_shot()) throw Error("run_zero_shot requires a zero-shot method id");
  const std::string id = prompts::zero_shot_template_id(method.kind, session.task_kind());
  const auto prompt = session.registry().render(id, prompts::problem_bindings(problem));
  const auto response = session.complete(prompt);
  pipeline::SolveResult result;
  result.raw = response.text;
  result.answer = canonicalize_answer(response.text, session.task_kind(), problem.options);
  return result;
}

// ---------------------------------------------------------------------------
// Similarity retrieval
// ---------------------------------------------------------------------------

inline double cosine_similarity(const provider::EmbeddingVector& a,
                                const provider::EmbeddingVector& b) {
  if (a.dim() != b.dim()) throw Error("cosine_similarity dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) throw ZeroVector("cosine_similarity of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Top-n pool problems by cosine to the target embedding, excluding any pool
/// entry sharing the target's id. Ties keep pool order; output is ordered by
/// descending similarity.
inline std::vector<Problem> retrieve_top_n(const Problem& target,
                                           const provider::EmbeddingVector& target_embedding,
                                           const DemoPool& pool, int n) {
  if (!pool.embedded()) throw Error("retrieve_top_n requires an embedded pool");
  std::vector<std::pair<std::size_t, double>> scored;
  for (std::size_t i = 0; i < pool.problems.size(); ++i) {
    if (pool.problems[i].id == target.id) continue;  // self-exclusion
    scored.emplace_back(i, cosine_similarity(target_embedding, pool.embeddings[i]));
  }
  if (n < 0 || static_cast<std::size_t>(n) > scored.size()) {
    throw PoolTooSmall("pool holds " + std::to_string(scored.size()) +
                       " candidates, need " + std::to_string(n));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& lhs, const auto& rhs) { return lhs.second > rhs.second; });
  std::vector<Problem> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(pool.problems[scored[static_cast<std::size_t>(i)].first]);
  return out;
}

// ---------------------------------------------------------------------------
// K-means demonstration selection
// ---------------------------------------------------------------------------

struct ClusterModel {
  int k{0};
  std::vector<provider::EmbeddingVector> centroids;
  std::vector<int> assignment;            // problem index -> cluster id
  std::vector<double> distortion_history; // one entry per assignment pass
};

namespace detail {

inline double squared_distance(const provider::EmbeddingVector& a,
                               const provider::EmbeddingVector& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double diff = a.values[i] - b.values[i];
    sum += diff * diff;
  }
  return sum;
}

}  // namespace detail

/// Lloyd's algorithm with deterministic farthest-point seeding from index 0.
/// Assignment ties go to the lowest centroid index; iteration stops when
/// assignments stabilize or after 100 passes.
inline ClusterModel kmeans(const std::vector<provider::EmbeddingVector>& vectors, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > vectors.size()) {
    throw InvalidK("k=" + std::to_string(k) + " for " + std::to_string(vectors.size()) +
                   " vectors");
  }
  ClusterModel model;
  model.k = k;

  // Farthest-point seeding: start at index 0, then repeatedly take the point
  // farthest from its nearest chosen centroid (ties to the lowest index).
  std::vector<std::size_t> seeds = {0};
  while (static_cast<int>(seeds.size()) < k) {
    std::size_t best_index = 0;
    double best_dist = -1.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      double nearest = std::numeric_limits<double>::max();
      for (const auto seed : seeds) {
        nearest = std::min(nearest, detail::squared_distance(vectors[i], vectors[seed]));
      }
      if (nearest > best_dist) {
        best_dist = nearest;
        best_index = i;
      }
    }
    seeds.push_back(best_index);
  }
  for (const auto seed : seeds) model.centroids.push_back(vectors[seed]);

  model.assignment.assign(vectors.size(), -1);
  for (int iteration = 0; iteration < 100; ++iteration) {
    bool changed = false;
    double distortion = 0.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      int best_cluster = 0;
      double best_dist = std::numeric_limits<double>::max();
      for (int c = 0; c < k; ++c) {
        const double dist = detail::squared_distance(vectors[i], model.centroids[static_cast<std::size_t>(c)]);
        if (dist < best_dist) {
          best_dist = dist;
          best_cluster = c;
        }
      }
      distortion += best_dist;
      if (model.assignment[i] != best_cluster) {
        model.assignment[i] = best_cluster;
        changed = true;
      }
    }
    model.distortion_history.push_back(distortion);
    if (!changed) break;

    std::vector<provider::EmbeddingVector> sums(static_cast<std::size_t>(k));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (auto& sum : sums) sum.values.assign(vectors[0].values.size(), 0.0);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      const auto c = static_cast<std::size_t>(model.assignment[i]);
      for (std::size_t d = 0; d < vectors[i].values.size(); ++d) {
        sums[c].values[d] += vectors[i].values[d];
      }
      ++counts[c];
    }
    for (int c = 0; c < k; ++c) {
      const auto idx = static_cast<std::size_t>(c);
      if (counts[idx] == 0) continue;  // empty cluster keeps its centroid
      for (auto& v : sums[idx].values) v /= counts[idx];
      model.centroids[idx] = std::move(sums[idx]);
    }
  }
  return model;
}

/// Auto-CoT selection: cluster the pool into n groups and take each
/// cluster's nearest-to-centroid problem (ties to the lowest pool index),
/// ordered by cluster id.
inline std::vector<Problem> select_auto_cot_demos(const DemoPool& pool, int n) {
  if (!pool.embedded()) throw Error("select_auto_cot_demos requires an embedded pool");
  const ClusterModel model = kmeans(pool.embeddings, n);
  std::vector<Problem> out;
  std::vector<bool> used(pool.problems.size(), false);
  for (int c = 0; c < n; ++c) {
    std::size_t best_index = pool.problems.size();
    double best_dist = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < pool.problems.size(); ++i) {
      if (model.assignment[i] != c || used[i]) continue;
      const double dist =
          detail::squared_distance(pool.embeddings[i], model.centroids[static_cast<std::size_t>(c)]);
      if (dist < best_dist) {
        best_dist = dist;
        best_index = i;
      }
    }
    if (best_index == pool.problems.size()) {
      // Cluster emptied by duplicate points: fall back to the nearest unused
      // pool entry so the demo set keeps its size.
      for (std::size_t i = 0; i < pool.problems.size(); ++i) {
        if (used[i]) continue;
        const double dist =
            detail::squared_distance(pool.embeddings[i], model.centroids[static_cast<std::size_t>(c)]);
        if (dist < best_dist) {
          best_dist = dist;
          best_index = i;
        }
      }
    }
    used[best_index] = true;
    out.push_back(pool.problems[best_index]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rationale annotation for retrieved/clustered demonstrations
// ---------------------------------------------------------------------------

/// Runs a zero-shot completion on a pool problem and wraps the reply as a
/// demonstration. The LLM's answer is kept even when it disagrees with gold
/// (flagged); an unextractable answer falls back to gold (also flagged).
inline Demonstration annotate_rationale(const Problem& problem, SolverStyle style,
                                        pipeline::LlmSession& session, DemoOrigin origin) {
  MethodKind zero_shot = MethodKind::ZsCoT;
  if (style == SolverStyle::Direct) zero_shot = MethodKind::ZsDirect;
  if (style == SolverStyle::PS) zero_shot = MethodKind::ZsPS;
  const std::string id = prompts::zero_shot_template_id(zero_shot, session.task_kind());
  const auto prompt = session.registry().render(id, prompts::problem_bindings(problem));
  const auto response = session.complete(prompt);

  Demonstration demo;
  demo.problem_text = demo_problem_text(problem);
  demo.rationale = response.text;
  demo.origin = origin;
  const auto answer = canonicalize_answer(response.text, session.task_kind(), problem.options);
  if (answer) {
    demo.answer = *answer;
    demo.annotated_answer_mismatch = (*answer != problem.gold);
  } else {
    demo.answer = problem.gold;
    demo.annotated_answer_unparsed = true;
  }
  return demo;
}

/// Loads a task's human-written demonstrations (JSON list of
/// {problem, rationale, answer}); FsDirect callers strip the rationales.
inline std::vector<Demonstration> load_manual_demos(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read manual demonstrations: " + path.string());
  nlohmann::json arr = nlohmann::json::parse(in);
  if (!arr.is_array()) throw Error("manual demonstrations must be a JSON array");
  std::vector<Demonstration> out;
  for (const auto& item : arr) {
    Demonstration demo;
    demo.problem_text = item.at("problem").get<std::string>();
    demo.rationale = item.value("rationale", std::string());
    demo.answer = AnswerLabel{item.at("answer").get<std::string>()};
    demo.origin = DemoOrigin::Human;
    out.push_back(std::move(demo));
  }
  return out;
}

inline std::vector<Demonstration> strip_rationales(std::vector<Demonstration> demos) {
  for (auto& demo : demos) demo.rationale.clear();
  return demos;
}

}  // namespace selftaught::baselines
