#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "selftaught/core.hpp"
#include "selftaught/provider.hpp"

namespace selftaught::eval {

using nlohmann::json;

class MixedLabelSpaces : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class DegenerateX : public Error {
 public:
  using Error::Error;
};

class IdMismatch : public Error {
 public:
  using Error::Error;
};

class MissingReference : public Error {
 public:
  using Error::Error;
};

/// Per-instance prediction trace summary; the carrier for every reported
/// number.
struct RunRecord {
  std::string problem_id;
  std::string method;
  std::string run_tag;
  std::optional<AnswerLabel> predicted;  // nullopt records a ParseFailure
  AnswerLabel gold;
  provider::TokenUsage usage_total;  // sum over the instance's non-cached exchanges
  int llm_calls{0};
  std::string trace_path;
  std::string model_name;

  bool correct() const { return predicted.has_value() && *predicted == gold; }
};

inline json to_json(const RunRecord& record) {
  return {{"problem_id", record.problem_id},
          {"method", record.method},
          {"run_tag", record.run_tag},
          {"predicted", record.predicted ? json(record.predicted->value) : json(nullptr)},
          {"gold", record.gold.value},
          {"usage", {{"input_tokens", record.usage_total.input_tokens},
                     {"output_tokens", record.usage_total.output_tokens},
                     {"estimated", record.usage_total.estimated}}},
          {"llm_calls", record.llm_calls},
          {"trace_path", record.trace_path},
          {"model_name", record.model_name}};
}

inline RunRecord run_record_from_json(const json& doc) {
  RunRecord record;
  record.problem_id = doc.at("problem_id").get<std::string>();
  record.method = doc.at("method").get<std::string>();
  record.run_tag = doc.at("run_tag").get<std::string>();
  if (!doc.at("predicted").is_null()) {
    record.predicted = AnswerLabel{doc.at("predicted").get<std::string>()};
  }
  record.gold = AnswerLabel{doc.at("gold").get<std::string>()};
  const auto& usage = doc.at("usage");
  record.usage_total.input_tokens = usage.at("input_tokens").get<long>();
  record.usage_total.output_tokens = usage.at("output_tokens").get<long>();
  record.usage_total.estimated = usage.value("estimated", false);
  record.llm_calls = doc.at("llm_calls").get<int>();
  record.trace_path = doc.at("trace_path").get<std::string>();
  record.model_name = doc.value("model_name", std::string());
  return record;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

struct ClassMetrics {
  double precision{0.0};
  double recall{0.0};
  double f1{0.0};
  long support{0};
};

struct MetricsReport {
  double accuracy{0.0};
  std::map<std::string, ClassMetrics> per_class;
  double weighted_precision{0.0};
  double weighted_recall{0.0};
  double weighted_f1{0.0};
  double parse_failure_rate{0.0};
  long total{0};
};

namespace detail {

// Exact rational accumulator for support-weighted class metrics: keeps the
// worked examples bit-exact (e.g. a weighted F1 that is mathematically 3/4
// comes out as the double 0.75, not 0.75 +/- 1 ulp).
struct Fraction {
  __int128 num{0};
  __int128 den{1};

  static __int128 gcd(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    return a == 0 ? 1 : a;
  }

  void add(__int128 n, __int128 d) {
    num = num * d + n * den;
    den *= d;
    const __int128 g = gcd(num, den);
    num /= g;
    den /= g;
  }

  double value() const {
    return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
  }
};

inline int label_family(const std::string& label) {
  if (label.size() == 1 && label[0] >= 'A' && label[0] <= 'E') return 0;
  if (label == "Yes" || label == "No") return 1;
  if (label == "AD" || label == "MCI" || label == "Normal") return 2;
  return -1;
}

}  // namespace detail

/// Accuracy plus per-class and support-weighted precision/recall/F1.
/// A ParseFailure scores incorrect, adds a false negative to its gold class
/// and no false positive anywhere; 0/0 ratios resolve to 0.
inline MetricsReport score(const std::vector<RunRecord>& records) {
  if (records.empty()) throw EmptyInput("score requires at least one record");

  int family = -2;
  for (const auto& record : records) {
    const int f = detail::label_family(record.gold.value);
    if (family == -2) family = f;
    if (f != family ||
        (record.predicted && detail::label_family(record.predicted->value) != family)) {
      throw MixedLabelSpaces("records span more than one label space");
    }
  }

  std::set<std::string> classes;
  for (const auto& record : records) {
    classes.insert(record.gold.value);
    if (record.predicted) classes.insert(record.predicted->value);
  }

  MetricsReport report;
  report.total = static_cast<long>(records.size());
  long correct = 0;
  long failures = 0;
  for (const auto& record : records) {
    if (record.correct()) ++correct;
    if (!record.predicted) ++failures;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(report.total);
  report.parse_failure_rate = static_cast<double>(failures) / static_cast<double>(report.total);

  detail::Fraction weighted_precision, weighted_recall, weighted_f1;
  for (const auto& label : classes) {
    long tp = 0, fp = 0, fn = 0, support = 0;
    for (const auto& record : records) {
      const bool gold_here = record.gold.value == label;
      const bool pred_here = record.predicted && record.predicted->value == label;
      if (gold_here) ++support;
      if (gold_here && pred_here) ++tp;
      if (!gold_here && pred_here) ++fp;
      if (gold_here && !pred_here) ++fn;
    }
    ClassMetrics metrics;
    metrics.support = support;
    metrics.precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    metrics.recall = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    metrics.f1 =
        (2 * tp + fp + fn) == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    report.per_class[label] = metrics;

    if (support > 0) {
      if (tp + fp > 0) weighted_precision.add(static_cast<__int128>(support) * tp, tp + fp);
      if (tp + fn > 0) weighted_recall.add(static_cast<__int128>(support) * tp, tp + fn);
      if (2 * tp + fp + fn > 0) {
        weighted_f1.add(static_cast<__int128>(support) * 2 * tp, 2 * tp + fp + fn);
      }
    }
  }
  const auto normalized = [&](detail::Fraction fraction) {
    fraction.den *= report.total;
    const __int128 g = detail::Fraction::gcd(fraction.num, fraction.den);
    fraction.num /= g;
    fraction.den /= g;
    return fraction.value();
  };
  report.weighted_precision = normalized(weighted_precision);
  report.weighted_recall = normalized(weighted_recall);
  report.weighted_f1 = normalized(weighted_f1);
  return report;
}

/// Middle order statistic; even-length input averages the two middles.
inline double median_of_runs(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

// ---------------------------------------------------------------------------
// Cost and analysis operations
// ---------------------------------------------------------------------------

struct CostPoint {
  std::string method;
  double mean_cost_per_instance{0.0};
  double accuracy{0.0};

  friend bool operator==(const CostPoint&, const CostPoint&) = default;
};

/// Non-dominated subset: q dominates p when q costs no more and scores at
/// least as well, strictly better on one side. Output is cost-ascending;
/// coordinate duplicates keep only the earliest point.
inline std::vector<CostPoint> pareto_frontier(const std::vector<CostPoint>& points) {
  std::vector<CostPoint> frontier;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
      if (i == j) continue;
      const auto& q = points[j];
      const bool weak = q.mean_cost_per_instance <= p.mean_cost_per_instance &&
                        q.accuracy >= p.accuracy;
      const bool strict = q.mean_cost_per_instance < p.mean_cost_per_instance ||
                          q.accuracy > p.accuracy;
      if (weak && strict) dominated = true;
    }
    if (dominated) continue;
    const bool duplicate = std::any_of(frontier.begin(), frontier.end(), [&](const CostPoint& q) {
      return q.mean_cost_per_instance == p.mean_cost_per_instance && q.accuracy == p.accuracy;
    });
    if (!duplicate) frontier.push_back(p);
  }
  std::stable_sort(frontier.begin(), frontier.end(), [](const CostPoint& a, const CostPoint& b) {
    return a.mean_cost_per_instance < b.mean_cost_per_instance;
  });
  return frontier;
}

/// Ordinary least squares over one regressor; returns (slope, intercept).
inline std::pair<double, double> ols_slope(const std::vector<double>& xs,
                                           const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw Error("ols_slope size mismatch");
  if (xs.size() < 2) throw EmptyInput("ols_slope requires at least two points");
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mean_x += xs[i];
    mean_y += ys[i];
  }
  mean_x /= static_cast<double>(xs.size());
  mean_y /= static_cast<double>(ys.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mean_x) * (xs[i] - mean_x);
    sxy += (xs[i] - mean_x) * (ys[i] - mean_y);
  }
  if (sxx == 0.0) throw DegenerateX("all x values are equal");
  const double beta = sxy / sxx;
  return {beta, mean_y - beta * mean_x};
}

struct OverlapReport {
  long both_correct{0};
  long only_a{0};
  long only_b{0};
  long both_wrong{0};
  double rate_a_correct_given_b_wrong{0.0};

  long universe() const { return both_correct + only_a + only_b + both_wrong; }
};

/// Per-instance correctness join of two record sets over one problem
/// universe, plus P(a correct | b wrong).
inline OverlapReport overlap_analysis(const std::vector<RunRecord>& records_a,
                                      const std::vector<RunRecord>& records_b) {
  std::map<std::string, bool> a, b;
  for (const auto& record : records_a) a[record.problem_id] = record.correct();
  for (const auto& record : records_b) b[record.problem_id] = record.correct();
  if (a.size() != records_a.size() || b.size() != records_b.size()) {
    throw IdMismatch("duplicate problem ids within a record set");
  }
  if (a.size() != b.size()) throw IdMismatch("record sets differ in size");
  OverlapReport report;
  for (const auto& [id, a_correct] : a) {
    const auto it = b.find(id);
    if (it == b.end()) throw IdMismatch("problem id missing from second set: " + id);
    const bool b_correct = it->second;
    if (a_correct && b_correct) ++report.both_correct;
    if (a_correct && !b_correct) ++report.only_a;
    if (!a_correct && b_correct) ++report.only_b;
    if (!a_correct && !b_correct) ++report.both_wrong;
  }
  const long denom = report.only_a + report.both_wrong;
  report.rate_a_correct_given_b_wrong =
      denom == 0 ? 0.0 : static_cast<double>(report.only_a) / static_cast<double>(denom);
  return report;
}

struct CostReportRow {
  std::string method;
  double mean_cost_per_instance{0.0};
  double accuracy{0.0};
  double normalized{0.0};  // reference method = 1.0
};

/// Mean per-instance API cost per method plus a column normalized to the
/// reference method.
inline std::vector<CostReportRow> cost_report(const std::vector<RunRecord>& records,
                                              const provider::PriceTable& prices,
                                              const std::string& reference_method) {
  if (records.empty()) throw EmptyInput("cost_report requires records");
  std::map<std::string, std::vector<const RunRecord*>> by_method;
  for (const auto& record : records) by_method[record.method].push_back(&record);
  if (by_method.count(reference_method) == 0) {
    throw MissingReference("reference method absent: " + reference_method);
  }

  std::map<std::string, CostReportRow> rows;
  for (const auto& [method, group] : by_method) {
    CostReportRow row;
    row.method = method;
    double total_cost = 0.0;
    long correct = 0;
    for (const auto* record : group) {
      total_cost += provider::cost_of(record->usage_total, record->model_name, prices);
      if (record->correct()) ++correct;
    }
    row.mean_cost_per_instance = total_cost / static_cast<double>(group.size());
    row.accuracy = static_cast<double>(correct) / static_cast<double>(group.size());
    rows[method] = row;
  }
  const double reference_cost = rows.at(reference_method).mean_cost_per_instance;
  std::vector<CostReportRow> out;
  for (auto& [method, row] : rows) {
    row.normalized = reference_cost == 0.0 ? 0.0 : row.mean_cost_per_instance / reference_cost;
    out.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double value, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
  return buf;
}

}  // namespace detail

inline json to_json(const MetricsReport& report) {
  json per_class = json::object();
  for (const auto& [label, metrics] : report.per_class) {
    per_class[label] = {{"precision", metrics.precision},
                        {"recall", metrics.recall},
                        {"f1", metrics.f1},
                        {"support", metrics.support}};
  }
  return {{"accuracy", report.accuracy},
          {"per_class", per_class},
          {"weighted", {{"precision", report.weighted_precision},
                        {"recall", report.weighted_recall},
                        {"f1", report.weighted_f1}}},
          {"parse_failure_rate", report.parse_failure_rate},
          {"total", report.total}};
}

inline std::string metrics_to_csv(const MetricsReport& report) {
  std::string out = "class,precision,recall,f1,support\n";
  for (const auto& [label, metrics] : report.per_class) {
    out += label + "," + detail::fmt(metrics.precision) + "," + detail::fmt(metrics.recall) +
           "," + detail::fmt(metrics.f1) + "," + std::to_string(metrics.support) + "\n";
  }
  out += "weighted," + detail::fmt(report.weighted_precision) + "," +
         detail::fmt(report.weighted_recall) + "," + detail::fmt(report.weighted_f1) + "," +
         std::to_string(report.total) + "\n";
  out += "accuracy," + detail::fmt(report.accuracy) + ",,,\n";
  out += "parse_failure_rate," + detail::fmt(report.parse_failure_rate) + ",,,\n";
  return out;
}

inline std::string metrics_to_text(const MetricsReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %10s %10s %10s %10s\n", "class", "precision",
                "recall", "f1", "support");
  out += line;
  for (const auto& [label, metrics] : report.per_class) {
    std::snprintf(line, sizeof(line), "%-12s %10.4f %10.4f %10.4f %10ld\n", label.c_str(),
                  metrics.precision, metrics.recall, metrics.f1, metrics.support);
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-12s %10.4f %10.4f %10.4f %10ld\n", "weighted",
                report.weighted_precision, report.weighted_recall, report.weighted_f1,
                report.total);
  out += line;
  std::snprintf(line, sizeof(line), "accuracy %.4f  parse_failure_rate %.4f  n=%ld\n",
                report.accuracy, report.parse_failure_rate, report.total);
  out += line;
  return out;
}

}  // namespace selftaught::eval
