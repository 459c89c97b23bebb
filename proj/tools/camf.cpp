// camf: prepare | train | evaluate | gradcheck | sweep
//
// Options may also come from a flat key=value file given with --config;
// command-line flags take precedence.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "camf/camf.hpp"

namespace {

std::vector<camf::ModelKind> parse_models(const std::string& text) {
  std::vector<camf::ModelKind> kinds;
  if (text == "all" || text == "ALL") return {camf::kAllModelKinds.begin(), camf::kAllModelKinds.end()};
  for (auto tok : camf::detail::split(text, ",")) kinds.push_back(camf::parse_model_kind(tok));
  return kinds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit-feedback recommenders: GMF, MLP, NeuMF, AADCF, CAMF"};
  app.set_config("--config", "", "key=value configuration file");
  app.require_subcommand(1, 1);
  app.fallthrough();

  camf::RunConfig cfg;
  std::string dataset_kind = "movielens";
  std::string models = "GMF";
  std::string layers = "32,16,8";
  std::string factors_list = "8,16,32";
  std::string category_map;
  std::uint64_t seed = 0;
  bool no_wall_clock = false;

  app.add_option("--dataset-kind", dataset_kind, "movielens or generic")->check(CLI::IsMember({"movielens", "generic"}));
  app.add_option("--ratings", cfg.ratings, "MovieLens ratings.dat");
  app.add_option("--users", cfg.users, "MovieLens users.dat");
  app.add_option("--items", cfg.items, "MovieLens movies.dat");
  app.add_option("--interactions", cfg.interactions, "generic interactions (user, item, timestamp)");
  app.add_option("--user-attrs", cfg.user_attrs, "generic user attributes (id, name)");
  app.add_option("--item-attrs", cfg.item_attrs, "generic item attributes (id, name)");
  app.add_option("--category-map", category_map, "raw_category -> main_category map");
  app.add_option("--data", cfg.data_dir, "prepared data directory (defaults to --out)");
  app.add_option("--out", cfg.out, "output directory");
  app.add_option("--model", models, "model kind(s), comma separated, or 'all'")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::Join);
  app.add_option("--factors", cfg.factors, "predictive factors")->check(CLI::PositiveNumber);
  app.add_option("--factors-list", factors_list, "sweep factor counts, comma separated")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::Join);
  app.add_option("--layers", layers, "MLP layer widths, comma separated")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::Join);
  app.add_option("--lr", cfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  app.add_option("--epochs", cfg.epochs, "training epochs");
  app.add_option("--batch-size", cfg.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  app.add_option("--neg-ratio", cfg.neg_ratio, "negatives per positive")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "random seed (required)");
  app.add_flag("--attr-cross", cfg.include_attr_cross, "CAMF: add the attribute x attribute cross term");
  app.add_option("--checkpoint-every", cfg.checkpoint_every, "also checkpoint every k epochs");
  app.add_flag("--no-wall-clock", no_wall_clock, "write 0 for wall_seconds so metrics files are reproducible");
  app.add_option("--checkpoint", cfg.checkpoint, "evaluate: checkpoint path");
  app.add_option("--dump-ranks", cfg.dump_ranks, "evaluate: write user<TAB>rank lines here");

  auto* prepare = app.add_subcommand("prepare", "parse raw data, split, sample test negatives");
  auto* train = app.add_subcommand("train", "train and write metrics CSV and checkpoint");
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint with HR@10 / NDCG@10");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check on a tiny problem");
  auto* sweep = app.add_subcommand("sweep", "train every model at every factor count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  return camf::run_guarded(
      [&]() -> int {
        cfg.dataset_kind = dataset_kind == "generic" ? camf::DatasetKind::Generic : camf::DatasetKind::MovieLens;
        cfg.models = parse_models(models);
        cfg.layers = camf::detail::parse_size_list(layers);
        cfg.factors_list = camf::detail::parse_size_list(factors_list);
        if (!category_map.empty()) cfg.category_map = category_map;
        if (seed_opt->count() > 0) cfg.seed = seed;
        cfg.record_wall_time = !no_wall_clock;

        if (prepare->parsed()) return camf::cmd_prepare(cfg, std::cout);
        if (train->parsed()) return camf::cmd_train(cfg, std::cout);
        if (evaluate->parsed()) return camf::cmd_evaluate(cfg, std::cout);
        if (gradcheck->parsed()) return camf::cmd_gradcheck(cfg, std::cout);
        if (sweep->parsed()) return camf::cmd_sweep(cfg, std::cout);
        return 1;
      },
      std::cerr);
}
