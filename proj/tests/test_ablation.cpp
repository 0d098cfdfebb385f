#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lgr/ablation.hpp"
#include "lgr/errors.hpp"

using namespace lgr;
namespace fs = std::filesystem;

namespace {

// Small enough that one cell trains in well under a second.
const char* kTinyShared = R"(
seeds = 3, 4
input_size = 16
image_size = 16
channel_plan = 4,8
convs_per_block = 1
inject_after_block = 2
node_dim = 4
num_stacks = 1
clustering_depth = 1
train_count = 8
val_count = 6
distractor_prob = 0.5
epochs = 2
batch_size = 4
)";

std::string tiny_plan(const std::string& sections) { return std::string(kTinyShared) + sections; }

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(AblationPlan, SeedsSharedOptionsAndSections) {
  const AblationPlan plan = parse_ablation_plan(tiny_plan("[standard]\n[plain]\nclustering_depth = 0\n"));
  EXPECT_EQ(plan.seeds, (std::vector<std::uint64_t>{3, 4}));
  ASSERT_EQ(plan.variants.size(), 2u);
  EXPECT_EQ(plan.variants[0].name, "standard");
  EXPECT_TRUE(plan.variants[0].overrides.empty());
  EXPECT_EQ(plan.variants[1].overrides.at(0).key, "clustering_depth");

  const ExperimentConfig cfg = ablation_experiment(plan, plan.variants[1], 4);
  EXPECT_EQ(cfg.model.clustering_depth, 0u);
  EXPECT_EQ(cfg.model.input_size, 16u);
  EXPECT_EQ(cfg.train.seed, 4u);
  EXPECT_EQ(cfg.synth.seed, 4u);
}

TEST(AblationPlan, DefaultSeedAndErrors) {
  EXPECT_EQ(parse_ablation_plan("[a]\n").seeds, (std::vector<std::uint64_t>{1}));
  EXPECT_THROW(parse_ablation_plan("epochs = 1\n"), ConfigError);
  EXPECT_THROW(parse_ablation_plan("[a]\n[a]\n"), ConfigError);
  EXPECT_THROW(parse_ablation_plan("[a,b]\n"), ConfigError);
  EXPECT_THROW(parse_ablation_plan("seeds = x\n[a]\n"), ConfigError);
}

TEST(AblationRow, CsvRoundTrip) {
  AblationRow r;
  r.config = "four_stacks";
  r.seed = 7;
  r.fingerprint = "00ff00ff00ff00ff";
  r.status = "ok";
  r.avg_ne = 0.1 / 3;
  r.clean_ne = 0.03;
  r.distractor_ne = std::nan("");
  r.best_epoch = 12;
  r.initial_orthogonality = 6.5;
  r.best_orthogonality = 1e-9;
  r.wall_time_s = 12.5;
  const AblationRow back = parse_ablation_csv_row(ablation_csv_row(r));
  EXPECT_EQ(back.config, r.config);
  EXPECT_EQ(back.avg_ne, r.avg_ne);
  EXPECT_EQ(back.clean_ne, r.clean_ne);
  EXPECT_TRUE(std::isnan(back.distractor_ne));
  EXPECT_EQ(back.best_epoch, 12u);
  EXPECT_EQ(back.best_orthogonality, 1e-9);
  EXPECT_EQ(back.fingerprint, r.fingerprint);

  AblationRow bad;
  bad.config = "broken";
  bad.status = "config: line 3, unknown key";
  const std::string line = ablation_csv_row(bad);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10);
  EXPECT_EQ(parse_ablation_csv_row(line).status, "config: line 3; unknown key");
  EXPECT_THROW(parse_ablation_csv_row("a,1,2"), ConfigError);
}

TEST(AblationRun, SingleConfigGivesOneRowPerSeed) {
  AblationPlan plan = parse_ablation_plan(tiny_plan("[standard]\n"));
  plan.seeds = {3};
  const auto rows = run_ablation(plan);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].config, "standard");
  EXPECT_TRUE(rows[0].ok()) << rows[0].status;
  EXPECT_GT(rows[0].avg_ne, 0.0);
  EXPECT_GE(rows[0].best_epoch, 1u);
  EXPECT_GE(rows[0].wall_time_s, 0.0);
  std::ostringstream table;
  write_ablation_table(rows, table);
  EXPECT_EQ(table.str().substr(0, table.str().find('\n')), ablation_csv_header());
}

TEST(AblationRun, InvalidConfigIsReportedAndTheRunContinues) {
  const AblationPlan plan =
      parse_ablation_plan(tiny_plan("[bad_key]\nno_such_option = 1\n[bad_value]\nnum_stacks = 0\n[standard]\n"));
  const auto rows = run_ablation(plan);
  ASSERT_EQ(rows.size(), 6u);
  for (const AblationRow& r : rows) {
    if (r.config == "standard") {
      EXPECT_TRUE(r.ok()) << r.status;
    } else {
      EXPECT_EQ(r.status.rfind("config: ", 0), 0u) << r.status;
    }
  }
  EXPECT_NE(rows[0].status.find("no_such_option"), std::string::npos);
}

TEST(AblationRun, JournalSkipsCompletedRowsAndRerunsChangedOnes) {
  const fs::path dir = fresh_dir("lgr_test_ablation");
  const std::string journal = (dir / "journal.csv").string();
  AblationPlan plan = parse_ablation_plan(tiny_plan("[standard]\n[plain]\nclustering_depth = 0\n"));
  AblationOptions opts;
  opts.journal_path = journal;
  std::size_t trained = 0;
  opts.on_epoch = [&](const std::string&, std::uint64_t, const EpochMetrics& m) { trained += m.epoch == 1; };

  const auto first = run_ablation(plan, opts);
  EXPECT_EQ(trained, 4u);

  // Simulate an interrupted run: keep the header and the first complete row plus a torn line.
  std::ifstream in(journal);
  std::string header, row0;
  std::getline(in, header);
  std::getline(in, row0);
  in.close();
  std::ofstream(journal, std::ios::trunc) << header << "\n" << row0 << "\nplain,3,0.1";

  trained = 0;
  const auto resumed = run_ablation(plan, opts);
  EXPECT_EQ(trained, 3u);
  ASSERT_EQ(resumed.size(), first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(resumed[i].config, first[i].config);
    EXPECT_EQ(resumed[i].avg_ne, first[i].avg_ne) << "training must be deterministic";
  }

  trained = 0;
  run_ablation(plan, opts);
  EXPECT_EQ(trained, 0u);

  // Changing an option changes the fingerprint, so those cells are retrained.
  plan.variants[1].overrides.push_back({"epochs", "1", 0});
  trained = 0;
  run_ablation(plan, opts);
  EXPECT_EQ(trained, 2u);
  fs::remove_all(dir);
}

TEST(AblationRun, CleanAndDistractorSubsetsSplitTheValidationSet) {
  AblationPlan plan = parse_ablation_plan(tiny_plan("[standard]\n"));
  plan.seeds = {3};
  const AblationRow r = run_ablation(plan).at(0);
  ASSERT_TRUE(r.ok()) << r.status;
  const ExperimentConfig cfg = ablation_experiment(plan, plan.variants[0], 3);
  const Dataset val = generate_split(cfg.synth, build_hierarchy(fld8()), "val");
  std::size_t distracted = 0;
  for (const auto& a : val.annotations) distracted += a.tags.distractor_present;
  ASSERT_GT(distracted, 0u);
  ASSERT_LT(distracted, val.size());
  EXPECT_GT(r.clean_ne, 0.0);
  EXPECT_GT(r.distractor_ne, 0.0);
}

TEST(Fingerprint, DependsOnEveryOption) {
  ExperimentConfig a, b;
  EXPECT_EQ(experiment_fingerprint(a), experiment_fingerprint(b));
  EXPECT_EQ(experiment_fingerprint(a).size(), 16u);
  b.synth.clutter_density = 3;
  EXPECT_NE(experiment_fingerprint(a), experiment_fingerprint(b));
}
