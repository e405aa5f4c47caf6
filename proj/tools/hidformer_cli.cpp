// hidformer: train, evaluate and backtest the dual-tower forecaster from the
// command line.
//
//   hidformer train    --data AAPL.csv --out runs/a [--config run.cfg] [--key value ...]
//   hidformer eval     --data AAPL.csv --checkpoint runs/a/checkpoint --out runs/a/eval
//   hidformer backtest --data AAPL.csv --checkpoint runs/a/checkpoint --out runs/a/bt
//   hidformer runs     --data AAPL.csv --config run.cfg --seeds 1,2,3,4,5 --out runs/all
//
// Exit codes: 0 ok, 1 data/IO, 2 configuration, 3 numerical divergence.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "hidformer/checkpoint.hpp"
#include "hidformer/config.hpp"
#include "hidformer/error.hpp"
#include "hidformer/evaluation.hpp"
#include "hidformer/io.hpp"
#include "hidformer/pipeline.hpp"
#include "hidformer/training.hpp"

namespace fs = std::filesystem;
using namespace hidformer;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kModule = "cli";

struct CommonArgs {
  std::string data;
  std::string out;
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file, "Flat key=value configuration file");
  for (const auto& key : RunConfig::keys()) {
    cmd->add_option_function<std::string>(
        "--" + key, [&args, key](const std::string& v) { args.overrides[key] = v; },
        "Override configuration key " + key);
  }
}

RunConfig resolve_config(const CommonArgs& args, RunConfig base = {}) {
  if (!args.config_file.empty()) {
    if (!fs::exists(args.config_file)) {
      throw ConfigError(kModule, "config file not found: " + args.config_file);
    }
    base.apply_text(io::read_text_file(args.config_file, kModule));
  }
  for (const auto& [key, value] : args.overrides) base.set(key, value);
  base.validate();
  return base;
}

void prepare_out_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError(kModule, "cannot create output directory " + out.string());
}

void write_manifest(const fs::path& out, const std::string& command, const std::string& data,
                    const std::vector<std::uint64_t>& seeds, const RunConfig& cfg) {
  if (!fs::is_regular_file(data)) throw DataError("data", "cannot open " + data);
  std::ostringstream m;
  m << "tool=hidformer\n"
    << "version=" << kVersion << '\n'
    << "command=" << command << '\n'
    << "data=" << data << '\n'
    << "data_sha256=" << io::sha256_file(data) << '\n'
    << "seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) m << (i ? "," : "") << seeds[i];
  m << '\n' << "out=" << out.string() << '\n';
  std::istringstream cfg_lines(cfg.to_text());
  for (std::string line; std::getline(cfg_lines, line);) m << "config." << line << '\n';
  io::write_text_file(out / "run_manifest.txt", m.str(), kModule);
}

std::string symbol_of(const std::string& data) { return fs::path(data).stem().string(); }

// ---------------------------------------------------------------------------

struct TrainOutcome {
  model::ModelParams params;
  std::size_t best_epoch = 0;
};

TrainOutcome train_into(const fs::path& out, const std::string& data_path, const RunConfig& cfg,
                        bool export_dataset) {
  prepare_out_dir(out);
  write_manifest(out, "train", data_path, {cfg.seed}, cfg);
  const auto loaded = data::load_csv(data_path);
  const auto prepared = pipeline::prepare(loaded.series, cfg);
  if (export_dataset) {
    data::write_dataset_csv(prepared.series, prepared.train_bars, out / "dataset.csv");
  }
  auto result = training::train(prepared.train, cfg.model_config(), cfg.train_config());
  training::save_checkpoint(result.best, cfg, out / "checkpoint");
  training::write_history_csv(result.history, out / "history.csv");
  return {std::move(result.best), result.best_epoch};
}

int cmd_train(const CommonArgs& args, bool export_dataset) {
  const auto cfg = resolve_config(args);
  const auto outcome = train_into(args.out, args.data, cfg, export_dataset);
  std::cout << "best_epoch=" << outcome.best_epoch << " checkpoint="
            << (fs::path(args.out) / "checkpoint").string() << '\n';
  return 0;
}

// Checkpoint config with any non-architecture overrides applied; a change to
// an architecture or window key is a configuration error.
training::Checkpoint load_for_eval(const std::string& checkpoint_dir, const CommonArgs& args) {
  auto ckpt = training::load_checkpoint(checkpoint_dir);
  const auto requested = resolve_config(args, ckpt.config);
  training::load_checkpoint(checkpoint_dir, requested);  // throws ConfigError on mismatch
  ckpt.config = requested;
  return ckpt;
}

struct EvalOutputs {
  pipeline::RunMetrics model;
  pipeline::RunMetrics baseline;
};

EvalOutputs eval_into(const fs::path& out, const std::string& data_path,
                      const training::Checkpoint& ckpt, const std::string& run_label,
                      bool self_test) {
  prepare_out_dir(out);
  const auto loaded = data::load_csv(data_path);
  const auto prepared = pipeline::prepare(loaded.series, ckpt.config);
  const auto preds = pipeline::predict(prepared.val, ckpt.params, ckpt.config.model_config());
  pipeline::write_predictions_csv(prepared.val, preds, out / "predictions.csv");

  EvalOutputs outputs;
  outputs.model = pipeline::evaluate(prepared, preds, ckpt.config.metrics_scale);
  if (self_test) {
    const auto dump = pipeline::read_predictions_csv(out / "predictions.csv");
    outputs.model.accuracy = evaluation::accuracy(dump.pred, dump.pred);
  }
  outputs.baseline = pipeline::evaluate(prepared, pipeline::persistence_predictions(prepared.val),
                                        ckpt.config.metrics_scale);
  std::ostringstream metrics;
  metrics << pipeline::metrics_header() << '\n'
          << pipeline::metrics_line({loaded.series.symbol, run_label, ckpt.config.seed,
                                     outputs.model})
          << '\n';
  io::write_text_file(out / "metrics.csv", metrics.str(), kModule);
  return outputs;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_dir, bool self_test) {
  const auto ckpt = load_for_eval(checkpoint_dir, args);
  prepare_out_dir(args.out);
  write_manifest(args.out, "eval", args.data, {ckpt.config.seed}, ckpt.config);
  const auto outputs = eval_into(args.out, args.data, ckpt, "0", self_test);
  std::cout << "mae=" << io::format_double(outputs.model.accuracy.mae)
            << " mse=" << io::format_double(outputs.model.accuracy.mse)
            << " mape=" << pipeline::format_optional(outputs.model.accuracy.mape) << '\n';
  return 0;
}

int cmd_backtest(const CommonArgs& args, const std::string& checkpoint_dir,
                 const std::string& baseline, bool oracle) {
  if (!baseline.empty() && baseline != "persistence") {
    throw ConfigError(kModule, "unknown baseline '" + baseline + "' (expected persistence)");
  }
  const auto ckpt = load_for_eval(checkpoint_dir, args);
  prepare_out_dir(args.out);
  write_manifest(args.out, "backtest", args.data, {ckpt.config.seed}, ckpt.config);
  const auto loaded = data::load_csv(args.data);
  const auto prepared = pipeline::prepare(loaded.series, ckpt.config);
  const auto preds = pipeline::predict(prepared.val, ckpt.params, ckpt.config.model_config());

  const auto inputs = pipeline::backtest_inputs(prepared, preds, oracle);
  const auto report = evaluation::backtest(inputs.closes, inputs.predicted_next);
  pipeline::write_backtest_csv(inputs, report, fs::path(args.out) / "backtest.csv");
  std::cout << pipeline::summary_line(report) << '\n';

  if (!baseline.empty()) {
    const auto base_inputs =
        pipeline::backtest_inputs(prepared, pipeline::persistence_predictions(prepared.val));
    const auto base_report = evaluation::backtest(base_inputs.closes, base_inputs.predicted_next);
    pipeline::write_backtest_csv(base_inputs, base_report,
                                 fs::path(args.out) / "baseline_backtest.csv");
    std::cout << "baseline " << pipeline::summary_line(base_report) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      seeds.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(kModule, "invalid seed '" + item + "'");
    }
  }
  if (seeds.empty()) throw ConfigError(kModule, "--seeds needs at least one seed");
  return seeds;
}

struct MetricColumn {
  const char* name;
  std::optional<double> (*get)(const pipeline::RunMetrics&);
};

const MetricColumn kMetricColumns[] = {
    {"mae", [](const pipeline::RunMetrics& m) -> std::optional<double> { return m.accuracy.mae; }},
    {"mse", [](const pipeline::RunMetrics& m) -> std::optional<double> { return m.accuracy.mse; }},
    {"mape", [](const pipeline::RunMetrics& m) { return m.accuracy.mape; }},
    {"final_net_value",
     [](const pipeline::RunMetrics& m) -> std::optional<double> { return m.backtest.final_net_value; }},
    {"volatility", [](const pipeline::RunMetrics& m) { return m.backtest.risk.volatility; }},
    {"max_drawdown",
     [](const pipeline::RunMetrics& m) -> std::optional<double> { return m.backtest.risk.max_drawdown; }},
    {"sharpe", [](const pipeline::RunMetrics& m) { return m.backtest.risk.sharpe; }},
};

int cmd_runs(const CommonArgs& args, const std::string& seeds_text) {
  const auto seeds = parse_seeds(seeds_text);
  const auto base = resolve_config(args);
  const fs::path out = args.out;
  prepare_out_dir(out);
  write_manifest(out, "runs", args.data, seeds, base);
  const auto symbol = symbol_of(args.data);

  std::vector<pipeline::MetricsRow> model_rows, baseline_rows;
  for (std::size_t r = 0; r < seeds.size(); ++r) {
    auto cfg = base;
    cfg.seed = seeds[r];
    const auto run_dir = out / ("seed_" + std::to_string(seeds[r]));
    try {
      auto outcome = train_into(run_dir, args.data, cfg, false);
      const training::Checkpoint ckpt{cfg, std::move(outcome.params)};
      const auto outputs = eval_into(run_dir, args.data, ckpt, std::to_string(r), false);
      model_rows.push_back({symbol, std::to_string(r), seeds[r], outputs.model});
      baseline_rows.push_back({symbol, std::to_string(r), seeds[r], outputs.baseline});
    } catch (const Error& e) {
      throw Error(e.kind(), e.module(),
                  std::string("run with seed ") + std::to_string(seeds[r]) + " failed: " +
                      (e.what() + e.module().size() + 2));
    }
  }

  std::ostringstream metrics;
  metrics << pipeline::metrics_header() << ",model\n";
  for (const auto& row : model_rows) metrics << pipeline::metrics_line(row) << ",hidformer\n";
  for (const auto& row : baseline_rows) metrics << pipeline::metrics_line(row) << ",persistence\n";
  io::write_text_file(out / "metrics.csv", metrics.str(), kModule);

  // Source rows carry one run each; the summary row holds mean and standard
  // error per metric.
  std::ostringstream agg;
  agg << "symbol,run,seed,runs";
  for (const auto& c : kMetricColumns) agg << ',' << c.name << ',' << c.name << "_se";
  agg << '\n';
  for (const auto& row : model_rows) {
    agg << row.symbol << ',' << row.run << ',' << row.seed << ",1";
    for (const auto& c : kMetricColumns) agg << ',' << pipeline::format_optional(c.get(row.metrics)) << ",0";
    agg << '\n';
  }
  agg << symbol << ",mean,," << model_rows.size();
  std::ostringstream sig;
  sig << "metric,u_model,u_baseline,p_value,method\n";
  for (const auto& c : kMetricColumns) {
    std::vector<double> model_values, baseline_values;
    for (const auto& row : model_rows)
      if (auto v = c.get(row.metrics)) model_values.push_back(*v);
    for (const auto& row : baseline_rows)
      if (auto v = c.get(row.metrics)) baseline_values.push_back(*v);
    if (model_values.size() != model_rows.size() || model_values.empty()) {
      agg << ",NA,NA";
    } else {
      const auto a = evaluation::aggregate_runs(model_values);
      agg << ',' << io::format_double(a.mean) << ',' << io::format_double(a.standard_error);
    }
    if (model_values.empty() || baseline_values.empty()) {
      sig << c.name << ",NA,NA,NA,NA\n";
    } else {
      const auto mw = evaluation::mann_whitney_u(model_values, baseline_values);
      sig << c.name << ',' << io::format_double(mw.u_a) << ',' << io::format_double(mw.u_b) << ','
          << io::format_double(mw.p_value) << ',' << (mw.exact ? "exact" : "normal") << '\n';
    }
  }
  agg << '\n';
  io::write_text_file(out / "aggregate.csv", agg.str(), kModule);
  io::write_text_file(out / "significance.csv", sig.str(), kModule);
  std::cout << "runs=" << seeds.size() << " aggregate=" << (out / "aggregate.csv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-tower transformer forecaster for daily stock prices"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommonArgs args;
  std::string checkpoint_dir, baseline, seeds;
  bool export_dataset = false, self_test = false, oracle = false;

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--data", args.data, "Input CSV")->required();
  train->add_option("--out", args.out, "Output directory")->required();
  train->add_flag("--export-dataset", export_dataset, "Also write dataset.csv with a split column");
  add_config_options(train, args);

  auto* eval = app.add_subcommand("eval", "Accuracy metrics on the validation split");
  eval->add_option("--data", args.data, "Input CSV")->required();
  eval->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory")->required();
  eval->add_option("--out", args.out, "Output directory")->required();
  eval->add_flag("--self-test", self_test, "Score the written predictions against themselves");
  add_config_options(eval, args);

  auto* bt = app.add_subcommand("backtest", "Long/short backtest on the validation split");
  bt->add_option("--data", args.data, "Input CSV")->required();
  bt->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory")->required();
  bt->add_option("--out", args.out, "Output directory")->required();
  bt->add_option("--baseline", baseline, "Also backtest a baseline (persistence)");
  bt->add_flag("--oracle", oracle, "Use the true next close as the prediction");
  add_config_options(bt, args);

  auto* runs = app.add_subcommand("runs", "Independent seeded runs with aggregate statistics");
  runs->add_option("--data", args.data, "Input CSV")->required();
  runs->add_option("--seeds", seeds, "Comma-separated seeds")->required();
  runs->add_option("--out", args.out, "Output directory")->required();
  add_config_options(runs, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(args, export_dataset);
    if (*eval) return cmd_eval(args, checkpoint_dir, self_test);
    if (*bt) return cmd_backtest(args, checkpoint_dir, baseline, oracle);
    if (*runs) return cmd_runs(args, seeds);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: cli: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
