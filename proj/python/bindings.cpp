#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hidformer/checkpoint.hpp"
#include "hidformer/config.hpp"
#include "hidformer/data.hpp"
#include "hidformer/error.hpp"
#include "hidformer/evaluation.hpp"
#include "hidformer/model.hpp"
#include "hidformer/pipeline.hpp"
#include "hidformer/training.hpp"

namespace py = pybind11;
using namespace hidformer;

namespace {

// Row-major values of a 2-D parameter as nested lists; 1-D as a flat list.
py::object tensor_to_python(const Tensor& t) {
  if (t.shape().size() == 2) {
    py::list rows;
    for (std::size_t r = 0; r < t.dim(0); ++r) {
      py::list row;
      for (std::size_t c = 0; c < t.dim(1); ++c) row.append(t.at(r, c));
      rows.append(row);
    }
    return rows;
  }
  return py::cast(t.to_vector());
}

std::vector<double> flat_window(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  for (const auto& row : rows) {
    if (row.size() != data::kNumChannels) {
      throw ContractError("python", "each window row needs 6 channels");
    }
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

py::dict risk_dict(const evaluation::RiskMetrics& r) {
  py::dict d;
  d["volatility"] = r.volatility;
  d["max_drawdown"] = r.max_drawdown;
  d["sharpe"] = r.sharpe;
  return d;
}

py::dict backtest_dict(const evaluation::BacktestReport& b) {
  py::dict d;
  d["directions"] = b.directions;
  d["returns"] = b.returns;
  d["net_value"] = b.net_value;
  d["final_net_value"] = b.final_net_value;
  d["risk"] = risk_dict(b.risk);
  return d;
}

py::dict accuracy_dict(const evaluation::AccuracyMetrics& a) {
  py::dict d;
  d["mae"] = a.mae;
  d["mse"] = a.mse;
  d["mape"] = a.mape;
  d["zero_truth_points"] = a.zero_truth_points;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual-tower transformer forecaster for daily stock prices";

  auto base = py::register_exception<Error>(m, "HidformerError", PyExc_RuntimeError);
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  // Data ---------------------------------------------------------------------
  py::class_<data::PriceSeries>(m, "PriceSeries")
      .def_readonly("symbol", &data::PriceSeries::symbol)
      .def("__len__", &data::PriceSeries::size)
      .def_property_readonly("dates",
                             [](const data::PriceSeries& s) {
                               std::vector<std::string> out;
                               for (const auto& b : s.bars) out.push_back(data::format_date(b.date));
                               return out;
                             })
      .def(
          "column",
          [](const data::PriceSeries& s, const std::string& name) {
            static const std::vector<std::string> names{"open",      "high",  "low", "close",
                                                        "adj_close", "volume"};
            const auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) throw ContractError("python", "unknown column " + name);
            const auto c = static_cast<data::Channel>(it - names.begin());
            std::vector<double> out;
            for (const auto& b : s.bars) out.push_back(b.channel(c));
            return out;
          },
          py::arg("name"));

  m.def(
      "load_csv",
      [](const std::filesystem::path& path) { return data::load_csv(path).series; },
      py::arg("path"));
  m.def(
      "parse_csv",
      [](const std::string& text, const std::string& symbol) {
        return data::parse_csv(text, symbol).series;
      },
      py::arg("text"), py::arg("symbol"));
  m.def("write_csv", &data::write_csv, py::arg("series"), py::arg("path"));

  // Configuration ------------------------------------------------------------
  py::class_<model::HidformerConfig>(m, "HidformerConfig")
      .def(py::init<>())
      .def_readwrite("n_t", &model::HidformerConfig::n_t)
      .def_readwrite("n_e", &model::HidformerConfig::n_e)
      .def_readwrite("n_b", &model::HidformerConfig::n_b)
      .def_readwrite("n_d", &model::HidformerConfig::n_d)
      .def_readwrite("t_x", &model::HidformerConfig::t_x)
      .def_readwrite("t_y", &model::HidformerConfig::t_y)
      .def_readwrite("d_ff", &model::HidformerConfig::d_ff)
      .def_readwrite("merge_factor", &model::HidformerConfig::merge_factor)
      .def_readwrite("segment_overlap", &model::HidformerConfig::segment_overlap)
      .def_readwrite("seed", &model::HidformerConfig::seed)
      .def("validate", &model::HidformerConfig::validate)
      .def("block_token_counts", &model::HidformerConfig::block_token_counts)
      .def("tower_output_size", &model::HidformerConfig::tower_output_size);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def(py::init([](const py::kwargs& kw) {
        RunConfig cfg;
        for (const auto& [k, v] : kw) cfg.set(py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
        return cfg;
      }))
      .def_static("keys", &RunConfig::keys)
      .def("set", [](RunConfig& c, const std::string& k, const std::string& v) { c.set(k, v); })
      .def("get", [](const RunConfig& c, const std::string& k) { return c.get(k); })
      .def("apply_text", [](RunConfig& c, const std::string& t) { c.apply_text(t); })
      .def("to_text", &RunConfig::to_text)
      .def("validate", &RunConfig::validate)
      .def("model_config", &RunConfig::model_config)
      .def("__eq__", [](const RunConfig& a, const RunConfig& b) { return a == b; });

  // Model --------------------------------------------------------------------
  py::class_<model::ModelParams>(m, "ModelParams")
      .def("names",
           [](const model::ModelParams& p) {
             std::vector<std::string> out;
             for (const auto& e : p.entries()) out.push_back(e.name);
             return out;
           })
      .def("shape", [](const model::ModelParams& p, const std::string& n) { return p.at(n).shape(); })
      .def("get", [](const model::ModelParams& p, const std::string& n) { return tensor_to_python(p.at(n)); })
      .def("total_values", &model::ModelParams::total_values)
      .def("identical_to", &model::ModelParams::identical_to)
      .def("__len__", &model::ModelParams::size);

  m.def("init_params", &model::init_params, py::arg("config"), py::arg("seed"));
  m.def(
      "forward",
      [](const std::vector<std::vector<double>>& window, const model::ModelParams& params,
         const model::HidformerConfig& cfg) {
        return model::forward(flat_window(window), params, cfg).to_vector();
      },
      py::arg("window"), py::arg("params"), py::arg("config"),
      "Predict t_y normalized closes from a t_x x 6 window of normalized values.");
  m.def(
      "token_counts",
      [](const model::HidformerConfig& cfg, const model::ModelParams& params) {
        model::ForwardTrace trace;
        model::forward(std::vector<double>(cfg.t_x * data::kNumChannels, 0.5), params, cfg, &trace);
        return std::make_pair(trace.time_token_counts, trace.freq_token_counts);
      },
      py::arg("config"), py::arg("params"));

  // Training -----------------------------------------------------------------
  m.def("weighted_mse",
        py::overload_cast<std::span<const double>, std::span<const double>>(&training::weighted_mse),
        py::arg("pred"), py::arg("target"));
  m.def(
      "train",
      [](const data::PriceSeries& series, const RunConfig& cfg) {
        const auto prepared = pipeline::prepare(series, cfg);
        auto result = [&] {
          py::gil_scoped_release release;
          return training::train(prepared.train, cfg.model_config(), cfg.train_config());
        }();
        py::list history;
        for (const auto& r : result.history) {
          history.append(py::make_tuple(r.epoch, r.train_loss, r.selection_loss));
        }
        return py::make_tuple(std::move(result.best), result.best_epoch, history);
      },
      py::arg("series"), py::arg("config"),
      "Train on the series' training split. Returns (params, best_epoch, history).");
  m.def(
      "evaluate",
      [](const data::PriceSeries& series, const RunConfig& cfg, const model::ModelParams& params) {
        const auto prepared = pipeline::prepare(series, cfg);
        const auto preds = pipeline::predict(prepared.val, params, cfg.model_config());
        const auto metrics = pipeline::evaluate(prepared, preds, cfg.metrics_scale);
        const auto baseline = pipeline::evaluate(
            prepared, pipeline::persistence_predictions(prepared.val), cfg.metrics_scale);
        py::dict out;
        out["accuracy"] = accuracy_dict(metrics.accuracy);
        out["backtest"] = backtest_dict(metrics.backtest);
        out["baseline_accuracy"] = accuracy_dict(baseline.accuracy);
        out["baseline_backtest"] = backtest_dict(baseline.backtest);
        return out;
      },
      py::arg("series"), py::arg("config"), py::arg("params"));
  m.def("save_checkpoint", &training::save_checkpoint, py::arg("params"), py::arg("config"),
        py::arg("path"));
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        auto ckpt = training::load_checkpoint(path);
        return py::make_tuple(std::move(ckpt.params), ckpt.config);
      },
      py::arg("path"));

  // Evaluation ---------------------------------------------------------------
  m.def(
      "accuracy",
      [](const std::vector<double>& pred, const std::vector<double>& truth) {
        return accuracy_dict(evaluation::accuracy(pred, truth));
      },
      py::arg("pred"), py::arg("truth"));
  m.def(
      "strategy_returns",
      [](const std::vector<double>& closes, const std::vector<double>& predicted_next) {
        return evaluation::strategy_returns(closes, predicted_next);
      },
      py::arg("closes"), py::arg("predicted_next"));
  m.def(
      "net_value", [](const std::vector<double>& r) { return evaluation::net_value(r); },
      py::arg("returns"));
  m.def(
      "risk_metrics",
      [](const std::vector<double>& returns, const std::vector<double>& nv) {
        return risk_dict(evaluation::risk_metrics(returns, nv));
      },
      py::arg("returns"), py::arg("net_value"));
  m.def(
      "backtest",
      [](const std::vector<double>& closes, const std::vector<double>& predicted_next) {
        return backtest_dict(evaluation::backtest(closes, predicted_next));
      },
      py::arg("closes"), py::arg("predicted_next"));
  m.def(
      "mann_whitney_u",
      [](const std::vector<double>& a, const std::vector<double>& b, const std::string& method) {
        auto pm = evaluation::PValueMethod::kAuto;
        if (method == "exact") pm = evaluation::PValueMethod::kExact;
        else if (method == "normal") pm = evaluation::PValueMethod::kNormal;
        else if (method != "auto") throw ContractError("python", "method must be auto, exact or normal");
        const auto r = evaluation::mann_whitney_u(a, b, pm);
        py::dict d;
        d["u_a"] = r.u_a;
        d["u_b"] = r.u_b;
        d["p_value"] = r.p_value;
        d["exact"] = r.exact;
        return d;
      },
      py::arg("a"), py::arg("b"), py::arg("method") = "auto");
  m.def(
      "aggregate_runs",
      [](const std::vector<double>& values) {
        const auto a = evaluation::aggregate_runs(values);
        return py::make_tuple(a.mean, a.standard_error);
      },
      py::arg("values"), "Mean and standard error over runs.");
}
