#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "camf/commands.hpp"
#include "support/synthetic.hpp"

namespace camf {
namespace {

namespace fs = std::filesystem;
using camf::testing::checksum;
using camf::testing::read_file;

struct Commands : ::testing::Test {
  static void SetUpTestSuite() {
    root_ = new fs::path(camf::testing::temp_dir("cmd"));
    fs::create_directories(*root_ / "raw");
    paths_ = new camf::testing::SyntheticPaths(camf::testing::write_synthetic_movielens(*root_ / "raw"));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete paths_;
    delete root_;
  }

  static RunConfig config(const std::string& out) {
    RunConfig cfg;
    cfg.ratings = paths_->ratings.string();
    cfg.users = paths_->users.string();
    cfg.items = paths_->movies.string();
    cfg.out = (*root_ / out).string();
    cfg.seed = 11;
    cfg.epochs = 2;
    cfg.record_wall_time = false;
    return cfg;
  }

  // Prepares into `out` and returns a config whose commands read from it.
  static RunConfig prepared(const std::string& out) {
    auto cfg = config(out);
    std::ostringstream log;
    EXPECT_EQ(cmd_prepare(cfg, log), 0);
    return cfg;
  }

  static fs::path* root_;
  static camf::testing::SyntheticPaths* paths_;
};
fs::path* Commands::root_ = nullptr;
camf::testing::SyntheticPaths* Commands::paths_ = nullptr;

TEST_F(Commands, PrepareReportsSummary) {
  auto cfg = config("summary");
  std::ostringstream log;
  ASSERT_EQ(cmd_prepare(cfg, log), 0);
  const auto corpus = parse_movielens(cfg.ratings, cfg.users, cfg.items);
  const std::string text = log.str();
  EXPECT_NE(text.find("users " + std::to_string(corpus.interactions.num_users()) + "\n"), std::string::npos);
  EXPECT_NE(text.find("interactions " + std::to_string(corpus.interactions.size()) + "\n"), std::string::npos);
  EXPECT_NE(text.find("sparsity "), std::string::npos);
  for (const char* f : {"split.txt", "attributes.txt", "user_ids.txt", "item_ids.txt"}) {
    EXPECT_TRUE(fs::exists(fs::path(cfg.out) / f)) << f;
  }
}

TEST_F(Commands, PrepareTwiceIsChecksumEqual) {
  const auto a = prepared("prep-a");
  const auto b = prepared("prep-b");
  for (const char* f : {"split.txt", "attributes.txt", "user_ids.txt", "item_ids.txt"}) {
    EXPECT_EQ(checksum(fs::path(a.out) / f), checksum(fs::path(b.out) / f)) << f;
  }
  auto c = config("prep-c");
  c.seed = 12;
  std::ostringstream log;
  cmd_prepare(c, log);
  EXPECT_NE(checksum(fs::path(a.out) / "split.txt"), checksum(fs::path(c.out) / "split.txt"));
}

TEST_F(Commands, MissingUsersFileIsIoExitNamingPath) {
  auto cfg = config("missing");
  cfg.users = (*root_ / "nowhere" / "users.dat").string();
  std::ostringstream log, err;
  const int code = run_guarded([&] { return cmd_prepare(cfg, log); }, err);
  EXPECT_EQ(code, 2);
  EXPECT_NE(err.str().find(cfg.users), std::string::npos) << err.str();
}

TEST_F(Commands, MissingSeedIsValidationExit) {
  auto cfg = config("noseed");
  cfg.seed.reset();
  std::ostringstream log, err;
  EXPECT_EQ(run_guarded([&] { return cmd_prepare(cfg, log); }, err), 1);
  EXPECT_NE(err.str().find("--seed"), std::string::npos);
}

TEST_F(Commands, ZeroEpochsWritesHeaderAndInitialCheckpoint) {
  auto cfg = prepared("zero");
  cfg.epochs = 0;
  cfg.models = {ModelKind::CAMF};
  std::ostringstream log;
  ASSERT_EQ(cmd_train(cfg, log), 0);
  const fs::path out(cfg.out);
  EXPECT_EQ(read_file(out / "CAMF-d8.metrics.csv"), std::string(kMetricsHeader) + "\n");

  const auto data = load_prepared(cfg.out);
  const auto model = model_config_for(ModelKind::CAMF, 8, cfg.layers, data.catalog);
  const auto ckpt = load_checkpoint((out / "CAMF-d8.ckpt").string());
  EXPECT_TRUE(ckpt.params == init_params(model, init_seed(*cfg.seed)));
  EXPECT_EQ(*ckpt.meta("epoch"), "0");
}

TEST_F(Commands, TrainRerunIsByteIdentical) {
  auto cfg = prepared("rerun-a");
  cfg.models = {ModelKind::GMF, ModelKind::NeuMF};
  std::ostringstream log;
  ASSERT_EQ(cmd_train(cfg, log), 0);
  auto again = cfg;
  again.data_dir = cfg.out;
  again.out = (*root_ / "rerun-b").string();
  ASSERT_EQ(cmd_train(again, log), 0);
  for (const char* f : {"GMF-d8.metrics.csv", "GMF-d8.ckpt", "NeuMF-d8.metrics.csv", "NeuMF-d8.ckpt"}) {
    EXPECT_EQ(read_file(fs::path(cfg.out) / f), read_file(fs::path(again.out) / f)) << f;
  }
  std::ifstream in(fs::path(cfg.out) / "GMF-d8.metrics.csv");
  const auto rows = read_metrics_csv(in);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].epoch, 2u);
  EXPECT_EQ(rows[1].model, "GMF");
  EXPECT_EQ(rows[1].seed, 11u);
  EXPECT_EQ(rows[1].wall_seconds, 0.0);
}

TEST_F(Commands, EvaluateMatchesLastTrainingEpoch) {
  auto cfg = prepared("eval");
  std::ostringstream log;
  ASSERT_EQ(cmd_train(cfg, log), 0);
  std::ifstream in(fs::path(cfg.out) / "GMF-d8.metrics.csv");
  const auto last = read_metrics_csv(in).back();

  cfg.dump_ranks = (fs::path(cfg.out) / "ranks.tsv").string();
  std::ostringstream report;
  ASSERT_EQ(cmd_evaluate(cfg, report), 0);
  EXPECT_NE(report.str().find("hr10 " + format_double(last.hr10) + "\n"), std::string::npos) << report.str();
  EXPECT_NE(report.str().find("ndcg10 " + format_double(last.ndcg10) + "\n"), std::string::npos);
  const auto first = read_file(cfg.dump_ranks);
  std::ostringstream again;
  cmd_evaluate(cfg, again);
  EXPECT_EQ(again.str(), report.str());
  EXPECT_EQ(read_file(cfg.dump_ranks), first);
}

TEST_F(Commands, SweepTableShape) {
  auto cfg = prepared("sweep");
  cfg.epochs = 1;
  cfg.factors_list = {8, 16, 32};
  cfg.models = {ModelKind::MLP, ModelKind::GMF};
  std::ostringstream log;
  ASSERT_EQ(cmd_sweep(cfg, log), 0);

  std::istringstream table(read_file(fs::path(cfg.out) / "sweep_hr10.csv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(table, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "factors,MLP,GMF");
  std::size_t cells = 0;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = detail::split(lines[r], ",");
    ASSERT_EQ(fields.size(), 3u);
    EXPECT_EQ(fields[0], std::to_string(cfg.factors_list[r - 1]));
    for (std::size_t k = 1; k < fields.size(); ++k) {
      EXPECT_NE(fields[k], "error");
      ++cells;
    }
  }
  EXPECT_EQ(cells, 6u);

  // The table values are the best-epoch hr10 from each cell's metrics CSV.
  std::ifstream in(fs::path(cfg.out) / "GMF-d16.metrics.csv");
  const auto best = best_row(read_metrics_csv(in));
  EXPECT_EQ(detail::split(lines[2], ",")[2], format_double(best->hr10));
}

TEST(SweepTable, FailedCellsAreMarkedAndOthersKept) {
  SweepCell ok{ModelKind::GMF, 8, MetricsRow{1, "GMF", 8, 1, 0.5, 0.25, 0.125, 0}, MetricsRow{}, ""};
  SweepCell bad{ModelKind::CAMF, 8, std::nullopt, std::nullopt, "diverged"};
  std::ostringstream out;
  write_sweep_table(out, {ok, bad}, {ModelKind::CAMF, ModelKind::GMF}, {8}, false);
  EXPECT_EQ(out.str(), "factors,CAMF,GMF\n8,error,0.25\n");
  std::ostringstream flat;
  write_sweep_long(flat, {bad});
  EXPECT_EQ(flat.str(), "factors,model,selection,epoch,hr10,ndcg10\n8,CAMF,error,,,\n");
}

TEST(MetricsCsv, RoundTripsLosslessly) {
  Rng rng(8);
  std::vector<MetricsRow> rows;
  for (std::size_t e = 1; e <= 200; ++e) {
    // Values over thirty decades exercise the shortest representation.
    auto awkward = [&] { return rng.uniform01() * std::pow(10.0, static_cast<double>(rng.uniform_below(30)) - 15); };
    rows.push_back({e, "CAMF", 32, rng.next(), awkward(), rng.uniform01(), rng.uniform01() / 3, awkward()});
  }
  rows.push_back({201, "GMF", 8, 0, 0.1 + 0.2, 5e-324, 1.0, 0.0});
  std::stringstream ss;
  write_metrics_header(ss);
  for (const auto& r : rows) write_metrics_row(ss, r);
  EXPECT_EQ(read_metrics_csv(ss), rows);
}

TEST(MetricsCsv, BadHeaderIsParseError) {
  std::istringstream in("epoch,model\n1,GMF\n");
  EXPECT_THROW(read_metrics_csv(in, "m.csv"), ParseError);
}

TEST(BestRow, HighestHitRateEarliestOnTies) {
  std::vector<MetricsRow> rows{{1, "X", 8, 1, 0, 0.3, 0, 0}, {2, "X", 8, 1, 0, 0.5, 0, 0}, {3, "X", 8, 1, 0, 0.5, 0, 0}};
  EXPECT_EQ(best_row(rows)->epoch, 2u);
  EXPECT_FALSE(best_row({}).has_value());
}

TEST(GradcheckCommand, ListsEveryParameterOncePerKind) {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.models = {kAllModelKinds.begin(), kAllModelKinds.end()};
  std::ostringstream log;
  EXPECT_EQ(cmd_gradcheck(cfg, log), 0) << log.str();
  std::map<std::string, std::map<std::string, int>> seen;
  std::istringstream in(log.str());
  for (std::string line; std::getline(in, line);) {
    const auto f = detail::split(line, "\t");
    if (f.size() > 2) ++seen[std::string(f[0])][std::string(f[1])];
  }
  for (ModelKind kind : kAllModelKinds) {
    const auto store = make_parameters(make_tiny_problem(kind, 42, {}).config);
    const auto& names = seen[std::string(to_string(kind))];
    EXPECT_EQ(names.size(), store.entries().size()) << to_string(kind);
    for (const auto& [name, count] : names) EXPECT_EQ(count, 1) << name;
    EXPECT_NE(log.str().find(std::string(to_string(kind)) + " PASS"), std::string::npos);
  }
}

TEST(GradcheckCommand, CorruptedRuleFailsNamingParameter) {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.models = {ModelKind::MLP};
  GradcheckOptions opt;
  opt.corrupt_backward = std::pair{Op::Dense, 1.5};
  std::ostringstream log;
  EXPECT_EQ(cmd_gradcheck(cfg, log, opt), 1);
  EXPECT_NE(log.str().find("MLP FAIL parameter "), std::string::npos) << log.str();
}

}  // namespace
}  // namespace camf
