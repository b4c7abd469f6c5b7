#pragma once

// Test scaffolding: transcript builders, synthetic datasets and temp-dir
// helpers. Lives with the tests; the shipped library never depends on it.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "selftaught/core.hpp"
#include "selftaught/datasets.hpp"
#include "selftaught/provider.hpp"

namespace selftaught::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            ("selftaught-test-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

/// Transcript whose Phase II-2 replies end "Certainty: <cs>", one list of
/// attempts per pseudo problem, consumed in order.
inline provider::Transcript make_cs_sequence(int problem_count,
                                             const std::vector<std::vector<int>>& cs_lists) {
  if (static_cast<int>(cs_lists.size()) != problem_count) {
    throw Error("cs_lists size must equal problem_count");
  }
  provider::Transcript transcript;
  for (int p = 0; p < problem_count; ++p) {
    int attempt = 0;
    for (const int cs : cs_lists[static_cast<std::size_t>(p)]) {
      ++attempt;
      provider::Transcript::Entry entry;
      entry.response = "Reasoning for pseudo problem " + std::to_string(p + 1) + ", attempt " +
                       std::to_string(attempt) + ".\nFinal Answer: A\nCertainty: " +
                       std::to_string(cs);
      transcript.entries.push_back(std::move(entry));
    }
  }
  return transcript;
}

inline datasets::EhrRecord make_synthetic_ehr(unsigned seed) {
  std::mt19937 rng(seed);
  datasets::EhrRecord record;
  record.age = 60 + static_cast<int>(rng() % 30);
  record.sex = (rng() % 2 == 0) ? "Male" : "Female";
  record.education_years = 8 + static_cast<int>(rng() % 12);
  record.marital_status = (rng() % 2 == 0) ? "Married" : "Widowed";
  record.mmse = static_cast<double>(rng() % 61) / 2.0;  // 0.0 .. 30.0
  record.apoe4_present = rng() % 2 == 0;
  static const datasets::Severity severities[] = {
      datasets::Severity::NO, datasets::Severity::MILD, datasets::Severity::MODERATE,
      datasets::Severity::SEVERE};
  for (const auto& region : datasets::ad_regions()) {
    record.region_atrophy[region] = severities[rng() % 4];
  }
  static const char* golds[] = {"AD", "MCI", "Normal"};
  record.gold = AnswerLabel{golds[rng() % 3]};
  return record;
}

/// Deterministic synthetic problems with known gold labels.
inline std::vector<Problem> make_toy_dataset(int n, TaskKind kind, unsigned seed) {
  if (n < 1) throw Error("toy dataset needs n >= 1");
  std::mt19937 rng(seed);
  std::vector<Problem> problems;
  for (int i = 0; i < n; ++i) {
    Problem problem;
    char id[32];
    std::snprintf(id, sizeof(id), "toy-%06d", i);
    problem.id = id;
    problem.task_kind = kind;
    problem.domain_tag = "toy";
    if (kind == TaskKind::MultipleChoice) {
      problem.stem = "Toy question " + std::to_string(i) + ": which option is marked correct?";
      static const char* labels[] = {"A", "B", "C", "D"};
      const int gold = static_cast<int>(rng() % 4);
      for (int o = 0; o < 4; ++o) {
        const bool is_gold = o == gold;
        problem.options.push_back(
            {labels[o], std::string(is_gold ? "the correct choice " : "a distractor ") +
                            std::to_string(i) + "-" + std::to_string(o)});
      }
      problem.gold = AnswerLabel{labels[gold]};
    } else if (kind == TaskKind::YesNo) {
      problem.stem = "Toy claim " + std::to_string(i) + ": is the flag set?";
      problem.gold = AnswerLabel{(rng() % 2 == 0) ? "Yes" : "No"};
    } else {
      const auto record = make_synthetic_ehr(seed + static_cast<unsigned>(i));
      problem = datasets::problem_from_ehr(record, id, "toy");
    }
    problem.validate();
    problems.push_back(std::move(problem));
  }
  return problems;
}

inline void write_text(const fs::path& path, const std::string& payload) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << payload;
}

}  // namespace selftaught::testing
