#pragma once

// Pipeline commands behind the `camf` executable. Each is a pure function of
// (input files, RunConfig): reruns with the same configuration write
// byte-identical files, except wall_seconds when wall-clock recording is on.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "camf/corpus.hpp"
#include "camf/errors.hpp"
#include "camf/evaluation.hpp"
#include "camf/metrics.hpp"
#include "camf/models.hpp"
#include "camf/parameters.hpp"
#include "camf/training.hpp"

namespace camf {

enum class DatasetKind { MovieLens, Generic };

struct RunConfig {
  DatasetKind dataset_kind = DatasetKind::MovieLens;
  std::string ratings;
  std::string users;
  std::string items;
  std::string interactions;
  std::string user_attrs;
  std::string item_attrs;
  std::optional<std::string> category_map;

  // Prepared split directory; empty means `out`.
  std::string data_dir;
  std::string out = ".";

  std::vector<ModelKind> models{ModelKind::GMF};
  std::size_t factors = 8;
  std::vector<std::size_t> factors_list{8, 16, 32};
  std::vector<std::size_t> layers{32, 16, 8};
  double lr = 0.001;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  unsigned neg_ratio = 4;
  std::optional<std::uint64_t> seed;
  bool include_attr_cross = false;
  std::size_t checkpoint_every = 0;
  bool record_wall_time = true;

  std::string checkpoint;  // evaluate: explicit checkpoint path
  std::string dump_ranks;  // evaluate: optional per-user rank dump

  std::string prepared_dir() const { return data_dir.empty() ? out : data_dir; }

  void validate() const {
    if (!seed) throw Error("--seed is required");
    if (models.empty()) throw Error("at least one model is required");
    if (factors == 0 || epochs > 1'000'000 || batch_size == 0 || neg_ratio == 0 || !(lr > 0.0)) {
      throw Error("numeric settings must be positive");
    }
    for (auto f : factors_list) {
      if (f == 0) throw Error("factor counts must be positive");
    }
    for (auto w : layers) {
      if (w == 0) throw Error("layer widths must be positive");
    }
  }
};

namespace detail {

inline std::filesystem::path path_in(const std::string& dir, const std::string& name) {
  return std::filesystem::path(dir) / name;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline std::string join(const std::vector<std::size_t>& values) {
  std::string s;
  for (std::size_t k = 0; k < values.size(); ++k) s += (k ? "," : "") + std::to_string(values[k]);
  return s;
}

inline std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (auto tok : split(text, ",")) {
    const auto v = parse_number<std::size_t>(tok);
    if (!v) throw Error("invalid list '" + text + "'");
    out.push_back(*v);
  }
  return out;
}

inline std::string run_stem(ModelKind kind, std::size_t factors) {
  return std::string(to_string(kind)) + "-d" + std::to_string(factors);
}

}  // namespace detail

struct PreparedData {
  SplitDataset split;
  AttributeCatalog catalog;
};

inline PreparedData load_prepared(const std::string& dir) {
  const auto split_path = detail::path_in(dir, "split.txt").string();
  const auto attr_path = detail::path_in(dir, "attributes.txt").string();
  auto split_in = detail::open_input(split_path);
  auto attr_in = detail::open_input(attr_path);
  PreparedData data{read_split(split_in, split_path), read_catalog(attr_in, attr_path)};
  if (data.catalog.num_users() != data.split.num_users() || data.catalog.num_items() != data.split.num_items()) {
    throw LoadError("attributes.txt does not match split.txt in " + dir);
  }
  return data;
}

// ---------------------------------------------------------------------------

inline int cmd_prepare(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  LoadedCorpus corpus = cfg.dataset_kind == DatasetKind::MovieLens
                            ? parse_movielens(cfg.ratings, cfg.users, cfg.items)
                            : parse_generic(cfg.interactions, cfg.user_attrs, cfg.item_attrs, cfg.category_map);
  const SplitDataset split = leave_one_out_split(corpus.interactions, *cfg.seed);

  detail::ensure_dir(cfg.out);
  {
    auto out = detail::open_output(detail::path_in(cfg.out, "split.txt").string());
    write_split(out, split);
  }
  {
    auto out = detail::open_output(detail::path_in(cfg.out, "attributes.txt").string());
    write_catalog(out, corpus.attributes);
  }
  for (const auto& [name, ids] : {std::pair{"user_ids.txt", &corpus.user_ids}, std::pair{"item_ids.txt", &corpus.item_ids}}) {
    auto out = detail::open_output(detail::path_in(cfg.out, name).string());
    for (std::size_t k = 0; k < ids->size(); ++k) out << k << '\t' << (*ids)[k] << '\n';
  }

  const auto& data = corpus.interactions;
  log << "users " << data.num_users() << "\n";
  log << "items " << data.num_items() << "\n";
  log << "interactions " << data.size() << "\n";
  log << "sparsity " << std::setprecision(6) << data.sparsity() << "\n";
  log << "user_vocab " << corpus.attributes.user_vocab_size() << "\n";
  log << "item_vocab " << corpus.attributes.item_vocab_size() << "\n";
  return 0;
}

inline CheckpointMetadata checkpoint_metadata(const ModelConfig& m, std::uint64_t seed, std::size_t epoch) {
  return {{"model", std::string(to_string(m.kind))},
          {"factors", std::to_string(m.factors)},
          {"layers", detail::join(m.mlp_layers)},
          {"num_users", std::to_string(m.num_users)},
          {"num_items", std::to_string(m.num_items)},
          {"user_vocab", std::to_string(m.user_vocab)},
          {"item_vocab", std::to_string(m.item_vocab)},
          {"include_attr_cross", m.include_attr_cross ? "1" : "0"},
          {"seed", std::to_string(seed)},
          {"epoch", std::to_string(epoch)}};
}

inline ModelConfig model_config_from(const Checkpoint& ckpt) {
  auto get = [&](const char* key) {
    const auto* v = ckpt.meta(key);
    if (!v) throw LoadError(std::string("checkpoint lacks '") + key + "' metadata");
    return *v;
  };
  auto number = [&](const char* key) {
    const auto v = detail::parse_number<Index>(get(key));
    if (!v) throw LoadError(std::string("checkpoint metadata '") + key + "' is not a number");
    return *v;
  };
  ModelConfig m;
  m.kind = parse_model_kind(get("model"));
  m.factors = number("factors");
  m.mlp_layers = detail::parse_size_list(get("layers"));
  m.num_users = number("num_users");
  m.num_items = number("num_items");
  m.user_vocab = number("user_vocab");
  m.item_vocab = number("item_vocab");
  m.include_attr_cross = get("include_attr_cross") == "1";
  return m;
}

inline void save_checkpoint(const std::string& path, const ParameterStore& params, const CheckpointMetadata& meta) {
  auto out = detail::open_output(path);
  write_checkpoint(out, params, meta);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto in = detail::open_input(path);
  return read_checkpoint(in, path);
}

struct TrainRun {
  std::string metrics_path;
  std::string checkpoint_path;
};

// Trains one (model, factors) cell and writes its metrics CSV and checkpoint.
inline TrainRun train_cell(const RunConfig& cfg, const PreparedData& data, ModelKind kind, std::size_t factors,
                           std::ostream& log) {
  TrainOptions opt;
  opt.model = model_config_for(kind, factors, cfg.layers, data.catalog);
  opt.model.include_attr_cross = cfg.include_attr_cross;
  opt.adam.learning_rate = cfg.lr;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.negative_ratio = cfg.neg_ratio;
  opt.seed = *cfg.seed;

  detail::ensure_dir(cfg.out);
  const std::string stem = detail::run_stem(kind, factors);
  TrainRun run{detail::path_in(cfg.out, stem + ".metrics.csv").string(),
               detail::path_in(cfg.out, stem + ".ckpt").string()};
  auto csv = detail::open_output(run.metrics_path);
  write_metrics_header(csv);
  csv.flush();

  const auto on_epoch = [&](const EpochRecord& rec, const ParameterStore& params) {
    write_metrics_row(csv, MetricsRow{rec.stats.epoch, std::string(to_string(kind)), factors, *cfg.seed,
                                      rec.stats.mean_loss, rec.eval.hr_at_10, rec.eval.ndcg_at_10,
                                      cfg.record_wall_time ? rec.stats.wall_seconds : 0.0});
    csv.flush();
    log << stem << " epoch " << rec.stats.epoch << " loss " << format_double(rec.stats.mean_loss) << " hr10 "
        << format_double(rec.eval.hr_at_10) << " ndcg10 " << format_double(rec.eval.ndcg_at_10) << "\n";
    if (cfg.checkpoint_every > 0 && rec.stats.epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(detail::path_in(cfg.out, stem + ".epoch" + std::to_string(rec.stats.epoch) + ".ckpt").string(),
                      params, checkpoint_metadata(opt.model, *cfg.seed, rec.stats.epoch));
    }
  };
  const TrainResult result = train(opt, data.split, data.catalog, on_epoch);
  save_checkpoint(run.checkpoint_path, result.params, checkpoint_metadata(opt.model, *cfg.seed, cfg.epochs));
  if (!csv) throw IoError("failed writing " + run.metrics_path);
  return run;
}

inline int cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const PreparedData data = load_prepared(cfg.prepared_dir());
  for (ModelKind kind : cfg.models) {
    const TrainRun run = train_cell(cfg, data, kind, cfg.factors, log);
    log << "wrote " << run.metrics_path << " and " << run.checkpoint_path << "\n";
  }
  return 0;
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const PreparedData data = load_prepared(cfg.prepared_dir());
  const std::string path = cfg.checkpoint.empty()
                               ? detail::path_in(cfg.out, detail::run_stem(cfg.models.front(), cfg.factors) + ".ckpt").string()
                               : cfg.checkpoint;
  const Checkpoint ckpt = load_checkpoint(path);
  const ModelConfig model = model_config_from(ckpt);
  if (make_parameters(model).entries().size() != ckpt.params.entries().size()) {
    throw LoadError(path + " does not match its declared architecture");
  }
  const EvalReport report = evaluate(model, ckpt.params, data.split, data.catalog);
  log << "model " << to_string(model.kind) << " factors " << model.factors << "\n";
  log << "hr10 " << format_double(report.hr_at_10) << "\n";
  log << "ndcg10 " << format_double(report.ndcg_at_10) << "\n";
  if (!cfg.dump_ranks.empty()) {
    auto out = detail::open_output(cfg.dump_ranks);
    write_rank_dump(out, report);
  }
  return 0;
}

// Exit 0 iff every requested kind passes.
inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& log, const GradcheckOptions& options = {}) {
  if (!cfg.seed) throw Error("--seed is required");
  bool all_passed = true;
  for (ModelKind kind : cfg.models) {
    const GradcheckReport report = gradcheck(kind, *cfg.seed, options);
    for (const auto& p : report.parameters) {
      log << to_string(kind) << '\t' << p.name << "\tmax_rel_error " << format_double(p.max_rel_error) << "\tchecked "
          << p.checked << "\tkink_skips " << p.skipped_kinks << "\n";
    }
    const auto* worst = report.worst();
    if (report.passed()) {
      log << to_string(kind) << " PASS max_rel_error " << format_double(report.max_rel_error()) << "\n";
    } else {
      all_passed = false;
      log << to_string(kind) << " FAIL parameter " << worst->name << " max_rel_error "
          << format_double(worst->max_rel_error) << "\n";
    }
  }
  return all_passed ? 0 : 1;
}

inline std::vector<SweepCell> run_sweep(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const PreparedData data = load_prepared(cfg.prepared_dir());
  std::vector<SweepCell> cells;
  for (std::size_t factors : cfg.factors_list) {
    for (ModelKind kind : cfg.models) {
      SweepCell cell;
      cell.model = kind;
      cell.factors = factors;
      try {
        const TrainRun run = train_cell(cfg, data, kind, factors, log);
        auto in = detail::open_input(run.metrics_path);
        const auto rows = read_metrics_csv(in, run.metrics_path);
        if (rows.empty()) {
          cell.error = "no epochs recorded";
        } else {
          cell.best = best_row(rows);
          cell.final = rows.back();
        }
      } catch (const std::exception& err) {
        cell.error = err.what();
        log << detail::run_stem(kind, factors) << " failed: " << err.what() << "\n";
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

inline int cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  const auto cells = run_sweep(cfg, log);
  {
    auto out = detail::open_output(detail::path_in(cfg.out, "sweep.csv").string());
    write_sweep_long(out, cells);
  }
  for (bool ndcg : {false, true}) {
    const std::string name = ndcg ? "sweep_ndcg10.csv" : "sweep_hr10.csv";
    std::ostringstream table;
    write_sweep_table(table, cells, cfg.models, cfg.factors_list, ndcg);
    auto out = detail::open_output(detail::path_in(cfg.out, name).string());
    out << table.str();
    log << (ndcg ? "NDCG@10 (best epoch)\n" : "HR@10 (best epoch)\n") << table.str();
  }
  for (const auto& c : cells) {
    if (!c.error.empty()) return 1;
  }
  return 0;
}

// Maps failures to exit codes: 2 for I/O, 1 for everything else.
inline int run_guarded(const std::function<int()>& command, std::ostream& err) {
  try {
    return command();
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace camf
