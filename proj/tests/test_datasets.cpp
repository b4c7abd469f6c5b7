#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "fixtures.hpp"
#include "selftaught/datasets.hpp"

using namespace selftaught;
using namespace selftaught::datasets;

namespace {

DatasetSpec csv_spec(const std::string& path, std::optional<int> expected = std::nullopt) {
  DatasetSpec spec;
  spec.name = "toy-mmlu";
  spec.task_kind = TaskKind::MultipleChoice;
  spec.format = DatasetFormat::MmluCsv;
  spec.test_path = path;
  spec.expected_size = expected;
  spec.domain_tag = "toy";
  return spec;
}

std::string mmlu_rows(int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    out += "\"Question " + std::to_string(i) + ", with a comma?\",alpha,beta,gamma,delta,B\n";
  }
  return out;
}

}  // namespace

TEST_CASE("mmlu csv loads headerless rows with quoting") {
  testing::TempDir tmp;
  const auto path = tmp.path() / "toy.csv";
  testing::write_text(path, mmlu_rows(3));
  const auto problems = load_dataset(csv_spec(path.string(), 3));
  REQUIRE(problems.size() == 3);
  CHECK(problems[0].id == "toy-mmlu-000000");
  CHECK(problems[0].stem == "Question 0, with a comma?");
  REQUIRE(problems[0].options.size() == 4);
  CHECK(problems[0].options[0].label == "A");
  CHECK(problems[0].options[0].text == "alpha");
  CHECK(problems[0].options[3].text == "delta");
  CHECK(problems[0].gold.value == "B");
}

TEST_CASE("mmlu csv rejects malformed rows naming the row index") {
  testing::TempDir tmp;
  const auto path = tmp.path() / "bad.csv";
  testing::write_text(path, "Q0,a,b,c,d,A\nQ1,a,b,c,A\n");  // row 1 has 3 option columns
  try {
    load_dataset(csv_spec(path.string()));
    FAIL("expected FormatError");
  } catch (const FormatError& ex) {
    CHECK(std::string(ex.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("expected-size gates fail loudly on mismatch") {
  testing::TempDir tmp;
  const auto path = tmp.path() / "toy.csv";
  testing::write_text(path, mmlu_rows(5));
  CHECK_THROWS_AS(load_dataset(csv_spec(path.string(), 7)), SizeMismatch);
  CHECK(load_dataset(csv_spec(path.string(), 5)).size() == 5);
  CHECK(load_dataset(csv_spec(path.string())).size() == 5);  // no gate configured
}

TEST_CASE("bigbench json picks the top-scored target") {
  testing::TempDir tmp;
  const auto path = tmp.path() / "task.json";
  testing::write_text(path, R"({"examples": [
    {"input": "Did Aristotle use a laptop?", "target_scores": {"Yes": 0.0, "No": 1.0}},
    {"input": "Is water wet?", "target_scores": {"Yes": 1.0, "No": 0.0}}
  ]})");
  DatasetSpec spec;
  spec.name = "toy-sqa";
  spec.task_kind = TaskKind::YesNo;
  spec.format = DatasetFormat::BigBenchJson;
  spec.test_path = path.string();
  const auto problems = load_dataset(spec);
  REQUIRE(problems.size() == 2);
  CHECK(problems[0].gold.value == "No");
  CHECK(problems[1].gold.value == "Yes");
  CHECK(problems[0].options.empty());

  testing::write_text(path, R"({"not_examples": 1})");
  CHECK_THROWS_AS(load_dataset(spec), FormatError);
}

TEST_CASE("jsonlines drops image records and non-english records") {
  testing::TempDir tmp;
  const auto path = tmp.path() / "data.jsonl";
  testing::write_text(
      path,
      R"({"question": "Q0?", "options": {"A": "x", "B": "y"}, "answer": "A"})" "\n"
      R"({"question": "Q1?", "options": {"A": "x", "B": "y"}, "answer": "B", "image": "img.png"})" "\n"
      R"({"question": "Q2?", "options": {"A": "x", "B": "y"}, "answer": "B", "image": null})" "\n"
      R"({"question": "Q3?", "options": {"A": "x", "B": "y"}, "answer": "A", "language": "zh"})" "\n"
      R"({"question": "Q4?", "options": ["x", "y", "z"], "answer": "C", "language": "en"})" "\n");
  DatasetSpec spec;
  spec.name = "toy-jsonl";
  spec.task_kind = TaskKind::MultipleChoice;
  spec.format = DatasetFormat::JsonLines;
  spec.test_path = path.string();
  const auto problems = load_dataset(spec);
  REQUIRE(problems.size() == 3);  // Q1 (image) and Q3 (language) dropped
  CHECK(problems[0].stem == "Q0?");
  CHECK(problems[1].stem == "Q2?");  // explicit null image stays
  CHECK(problems[2].stem == "Q4?");
  CHECK(problems[2].options.size() == 3);  // array options labeled A..C
  CHECK(problems[2].gold.value == "C");
}

TEST_CASE("jsonlines reports the offending line on parse failures") {
  testing::TempDir tmp;
  const auto path = tmp.path() / "bad.jsonl";
  testing::write_text(path,
                      R"({"question": "ok", "options": {"A": "x"}, "answer": "A"})" "\n"
                      "{oops\n");
  DatasetSpec spec;
  spec.name = "toy-bad";
  spec.task_kind = TaskKind::MultipleChoice;
  spec.format = DatasetFormat::JsonLines;
  spec.test_path = path.string();
  try {
    load_dataset(spec);
    FAIL("expected FormatError");
  } catch (const FormatError& ex) {
    CHECK(std::string(ex.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("ehr rendering fills the fixed template") {
  datasets::EhrRecord record;
  record.age = 65;
  record.sex = "Male";
  record.education_years = 16;
  record.marital_status = "Married";
  record.mmse = 26.0;
  record.apoe4_present = false;
  for (const auto& region : ad_regions()) record.region_atrophy[region] = Severity::NO;
  record.region_atrophy["Hippocampus"] = Severity::SEVERE;
  record.gold = AnswerLabel{"AD"};

  const std::string text = render_ehr(record);
  CHECK(text.find("65-year-old Male") != std::string::npos);
  CHECK(text.find("completed 16 years of education") != std::string::npos);
  CHECK(text.find("is Married") != std::string::npos);
  CHECK(text.find("26.0/30") != std::string::npos);
  CHECK(text.find("no APOE4 gene") != std::string::npos);
  CHECK(text.find("SEVERE hippocampal atrophy") != std::string::npos);

  record.apoe4_present = true;
  CHECK(render_ehr(record).find("an APOE4 gene") != std::string::npos);
}

TEST_CASE("uniform NO records render 14 NO lines in fixed region order") {
  datasets::EhrRecord record;
  record.age = 70;
  record.sex = "Female";
  record.education_years = 12;
  record.marital_status = "Widowed";
  record.mmse = 30.0;
  record.apoe4_present = false;
  for (const auto& region : ad_regions()) record.region_atrophy[region] = Severity::NO;
  record.gold = AnswerLabel{"Normal"};
  const std::string text = render_ehr(record);
  int count = 0;
  std::size_t pos = 0;
  while ((pos = text.find("- This patient has NO ", pos)) != std::string::npos) {
    ++count;
    ++pos;
  }
  CHECK(count == 14);
  // Fixed order: hippocampal first, cerebral cortex last.
  CHECK(text.find("hippocampal") < text.find("amygdala"));
  CHECK(text.rfind("cerebral cortex") > text.find("occipital lobe"));
}

TEST_CASE("ehr rendering is injective over visible fields") {
  const auto base = testing::make_synthetic_ehr(42);
  std::vector<datasets::EhrRecord> variants = {base};
  auto next = base;
  next.age += 1;
  variants.push_back(next);
  next = base;
  next.sex = base.sex == "Male" ? "Female" : "Male";
  variants.push_back(next);
  next = base;
  next.education_years += 2;
  variants.push_back(next);
  next = base;
  next.marital_status = "Divorced";
  variants.push_back(next);
  next = base;
  next.mmse = base.mmse >= 1.0 ? base.mmse - 1.0 : base.mmse + 1.0;
  variants.push_back(next);
  next = base;
  next.apoe4_present = !base.apoe4_present;
  variants.push_back(next);
  for (const auto& region : ad_regions()) {
    next = base;
    next.region_atrophy[region] =
        next.region_atrophy[region] == Severity::NO ? Severity::MILD : Severity::NO;
    variants.push_back(next);
  }
  std::set<std::string> renders;
  for (const auto& record : variants) renders.insert(render_ehr(record));
  CHECK(renders.size() == variants.size());
}

TEST_CASE("ehr records validate their invariants") {
  auto record = testing::make_synthetic_ehr(3);
  record.mmse = 31.0;
  CHECK_THROWS_AS(record.validate(), FormatError);
  record = testing::make_synthetic_ehr(3);
  record.region_atrophy.erase("Amygdala");
  CHECK_THROWS_AS(record.validate(), FormatError);
}

TEST_CASE("ehr json loads patients into diagnosis problems") {
  testing::TempDir tmp;
  nlohmann::json patients = nlohmann::json::array();
  for (unsigned i = 0; i < 4; ++i) {
    patients.push_back(ehr_record_to_json(testing::make_synthetic_ehr(i)));
  }
  const auto path = tmp.path() / "adni.json";
  testing::write_text(path, patients.dump(2));
  DatasetSpec spec;
  spec.name = "toy-adni";
  spec.task_kind = TaskKind::AdDiagnosis;
  spec.format = DatasetFormat::EhrJson;
  spec.test_path = path.string();
  spec.expected_size = 4;
  const auto problems = load_dataset(spec);
  REQUIRE(problems.size() == 4);
  for (const auto& problem : problems) {
    CHECK(problem.task_kind == TaskKind::AdDiagnosis);
    CHECK(problem.options.empty());
    CHECK(problem.stem.find("This patient is a") == 0);
  }
}

TEST_CASE("split_pool_and_eval partitions by demo ids") {
  const auto problems = testing::make_toy_dataset(10, TaskKind::MultipleChoice, 8);
  const auto [empty_pool, all_eval] = split_pool_and_eval(problems, {});
  CHECK(empty_pool.empty());
  CHECK(all_eval.size() == 10);

  const std::set<std::string> demo_ids = {problems[1].id, problems[4].id, problems[7].id};
  const auto [pool, eval_set] = split_pool_and_eval(problems, demo_ids);
  CHECK(pool.size() == 3);
  CHECK(eval_set.size() == 7);
  for (const auto& problem : eval_set) CHECK(demo_ids.count(problem.id) == 0);
  for (const auto& problem : pool) CHECK(demo_ids.count(problem.id) == 1);

  CHECK_THROWS_AS(split_pool_and_eval(problems, {"missing-id"}), UnknownDemoId);
}

TEST_CASE("problems round-trip through the canonical JSON format") {
  for (const auto kind : {TaskKind::MultipleChoice, TaskKind::YesNo, TaskKind::AdDiagnosis}) {
    const auto problems = testing::make_toy_dataset(5, kind, 21);
    for (const auto& problem : problems) {
      const auto restored = problem_from_json(problem_to_json(problem));
      CHECK(restored.id == problem.id);
      CHECK(restored.stem == problem.stem);
      CHECK(restored.options == problem.options);
      CHECK(restored.gold == problem.gold);
      CHECK(restored.task_kind == problem.task_kind);
      CHECK(restored.domain_tag == problem.domain_tag);
    }
  }
}

TEST_CASE("the task catalog pins the fifteen benchmark sizes") {
  REQUIRE(catalog().size() == 15);
  const std::map<std::string, int> expected = {
      {"strategyqa", 2290}, {"scienceqa", 2224}, {"medqa", 1273},  {"college-cs", 100},
      {"college-med", 173}, {"college-chem", 100}, {"college-math", 100}, {"college-phys", 102},
      {"college-bio", 144}, {"pro-acct", 282},   {"pro-med", 272},  {"pro-psych", 612},
      {"pro-law", 1534},    {"adni", 759},       {"aibl", 428}};
  for (const auto& [name, size] : expected) {
    const auto spec = catalog_lookup(name);
    REQUIRE(spec.has_value());
    CHECK(spec->expected_size == size);
  }
  CHECK(catalog_lookup("adni")->task_kind == TaskKind::AdDiagnosis);
  CHECK(catalog_lookup("strategyqa")->task_kind == TaskKind::YesNo);
  CHECK_FALSE(catalog_lookup("unknown").has_value());
}
