#include <doctest.h>

#include <random>

#include "hidformer/checkpoint.hpp"
#include "hidformer/config.hpp"
#include "hidformer/error.hpp"
#include "hidformer/io.hpp"
#include "hidformer/training.hpp"
#include "test_support.hpp"

using namespace hidformer;
using namespace hidformer::training;
using hidformer::testing::random_values;
using hidformer::testing::TempDir;

namespace {

data::WindowedDataset random_dataset(const model::HidformerConfig& cfg, std::size_t n,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  data::WindowedDataset ds;
  ds.t_x = cfg.t_x;
  ds.t_y = cfg.t_y;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> in(cfg.t_x * data::kNumChannels), out(cfg.t_y);
    for (auto& v : in) v = u(rng);
    for (auto& v : out) v = u(rng);
    ds.inputs.push_back(std::move(in));
    ds.targets.push_back(std::move(out));
    ds.origin_indices.push_back(i);
  }
  return ds;
}

model::ModelParams single_param(double value, double grad) {
  model::ModelParams p;
  auto t = Tensor::from({1}, {value}, true);
  t.mutable_grad()[0] = grad;
  p.add("w", t);
  return p;
}

}  // namespace

TEST_CASE("horizon weights and weighted_mse") {
  CHECK(horizon_weights(3) == std::vector<double>{3, 2, 1});
  CHECK(weighted_mse(std::vector<double>{1, 0}, std::vector<double>{0, 0}) ==
        doctest::Approx(2.0 / 3.0));
  CHECK(weighted_mse(std::vector<double>{0, 1}, std::vector<double>{0, 0}) ==
        doctest::Approx(1.0 / 3.0));
  CHECK(weighted_mse(std::vector<double>{0.3, 0.7}, std::vector<double>{0.3, 0.7}) == 0.0);

  const auto t = weighted_mse(Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 0}));
  CHECK(t.item() == doctest::Approx(2.0 / 3.0));

  std::mt19937_64 rng(1);
  auto pred = Tensor::from({6}, random_values(6, rng), true);
  const auto target = Tensor::from({6}, random_values(6, rng));
  std::vector<Tensor> params{pred};
  const auto report =
      finite_diff_check([&] { return weighted_mse(pred, target); }, params, 1e-6, 1e-6);
  INFO(report.diagnostic);
  CHECK(report.passed);

  CHECK_THROWS_AS(weighted_mse(std::vector<double>{1, 2}, std::vector<double>{1}), ContractError);
}

TEST_CASE("adam_step") {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;

  SUBCASE("zero gradient leaves parameters unchanged") {
    auto p = single_param(0.5, 0.0);
    auto st = make_optimizer_state(p);
    adam_step(p, st, cfg);
    CHECK(p.at("w").at(0) == 0.5);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves by about lr against the gradient") {
    for (double g : {3.0, -0.2, 1e-3}) {
      auto p = single_param(0.5, g);
      auto st = make_optimizer_state(p);
      adam_step(p, st, cfg);
      const double delta = p.at("w").at(0) - 0.5;
      CHECK(delta == doctest::Approx(-cfg.learning_rate * (g > 0 ? 1 : -1)).epsilon(1e-4));
    }
  }
  SUBCASE("constant gradient never grows the step beyond the first") {
    auto p = single_param(0.0, 0.7);
    auto st = make_optimizer_state(p);
    double prev = 0.0, first = 0.0;
    for (int i = 0; i < 20; ++i) {
      p.entries()[0].tensor.mutable_grad()[0] = 0.7;
      adam_step(p, st, cfg);
      const double step = std::abs(p.at("w").at(0) - prev);
      if (i == 0) first = step;
      CHECK(step <= first + 1e-12);
      prev = p.at("w").at(0);
    }
  }
  SUBCASE("update is invariant to gradient scale") {
    auto a = single_param(0.1, 0.4);
    auto b = single_param(0.1, 400.0);
    auto sa = make_optimizer_state(a);
    auto sb = make_optimizer_state(b);
    adam_step(a, sa, cfg);
    adam_step(b, sb, cfg);
    CHECK(a.at("w").at(0) == doctest::Approx(b.at("w").at(0)).epsilon(1e-7));
  }
  SUBCASE("non-finite gradient is rejected before any update") {
    auto p = single_param(0.5, 1.0);
    auto bad = Tensor::from({2}, {0.1, 0.2}, true);
    bad.mutable_grad()[1] = std::numeric_limits<double>::quiet_NaN();
    p.add("broken", bad);
    auto st = make_optimizer_state(p);
    try {
      adam_step(p, st, cfg);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("broken") != std::string::npos);
    }
    CHECK(p.at("w").at(0) == 0.5);
    CHECK(st.step == 0);
  }
}

TEST_CASE("selection_count") {
  CHECK(selection_count(100, 0.1) == 10);
  CHECK(selection_count(9, 0.1) == 0);
  CHECK(selection_count(8, 0.25) == 2);
}

TEST_CASE("train with zero epochs returns the initialization") {
  const auto mcfg = testing::toy_model_config();
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto result = train(random_dataset(mcfg, 10, 1), mcfg, cfg);
  CHECK(result.history.empty());
  CHECK(result.best_epoch == 0);
  CHECK(result.best.identical_to(model::init_params(mcfg, mcfg.seed)));
}

TEST_CASE("train overfits a single window") {
  const auto mcfg = testing::toy_model_config();
  const auto ds = random_dataset(mcfg, 1, 2);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 1;
  cfg.selection_fraction = 0.0;
  const double before = dataset_loss(ds, 0, 1, model::init_params(mcfg, mcfg.seed), mcfg);
  const auto result = train(ds, mcfg, cfg);
  REQUIRE(result.history.size() == 300);
  const double after = dataset_loss(ds, 0, 1, result.best, mcfg);
  CHECK(after < 0.05 * before);
  // Best epoch has the minimum selection loss, earliest on ties.
  double best = result.history[0].selection_loss;
  std::size_t best_epoch = 1;
  for (const auto& r : result.history) {
    if (r.selection_loss < best) {
      best = r.selection_loss;
      best_epoch = r.epoch;
    }
  }
  CHECK(result.best_epoch == best_epoch);
  CHECK(after == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("train is deterministic for a fixed seed") {
  const auto mcfg = testing::toy_model_config();
  const auto ds = random_dataset(mcfg, 37, 3);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  const auto a = train(ds, mcfg, cfg);
  const auto b = train(ds, mcfg, cfg);
  CHECK(a.best.identical_to(b.best));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].selection_loss == b.history[i].selection_loss);
  }
  cfg.seed = 2;
  const auto c = train(ds, mcfg, cfg);
  CHECK_FALSE(a.best.identical_to(c.best));
}

TEST_CASE("write_history_csv") {
  TempDir dir("history");
  write_history_csv({{1, 0.5, 0.25}, {2, 0.125, 0.0625}}, dir / "h.csv");
  CHECK(testing::read_file(dir / "h.csv") ==
        "epoch,train_loss,selection_loss\n1,0.5,0.25\n2,0.125,0.0625\n");
}

TEST_CASE("RunConfig parsing") {
  RunConfig cfg;
  cfg.apply_text("# comment\n\nt_x=64\nlearning_rate=0.001\nstats_scope=all\n");
  CHECK(cfg.t_x == 64);
  CHECK(cfg.learning_rate == 0.001);
  CHECK(cfg.stats_scope == StatsScope::kAll);
  RunConfig back;
  back.apply_text(cfg.to_text());
  CHECK(back == cfg);
  CHECK_THROWS_AS(cfg.set("bogus", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("t_x", "-3"), ConfigError);
  CHECK_THROWS_AS(cfg.set("learning_rate", "fast"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_text("t_x"), ConfigError);

  RunConfig bad;
  bad.n_t = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.split_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(RunConfig{}.validate());
  CHECK(RunConfig{}.model_config() == model::HidformerConfig{});
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir dir("ckpt");
  const auto rcfg = testing::toy_run_config();
  const auto params = model::init_params(rcfg.model_config(), 99);
  save_checkpoint(params, rcfg, dir / "c");

  const auto back = load_checkpoint(dir / "c", rcfg);
  CHECK(back.config == rcfg);
  CHECK(back.params.identical_to(params));

  SUBCASE("missing directory") {
    CHECK_THROWS_AS(load_checkpoint(dir / "nope"), DataError);
  }
  SUBCASE("truncated weights") {
    auto bytes = testing::read_file(dir / "c" / "weights.bin");
    bytes.resize(bytes.size() - 8);
    testing::write_file(dir / "c" / "weights.bin", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "c"), CorruptionError);
  }
  SUBCASE("extra weight bytes") {
    testing::write_file(dir / "c" / "weights.bin",
                        testing::read_file(dir / "c" / "weights.bin") + "12345678");
    CHECK_THROWS_AS(load_checkpoint(dir / "c"), CorruptionError);
  }
  SUBCASE("unknown parameter name") {
    auto manifest = testing::read_file(dir / "c" / "manifest.txt");
    manifest.replace(0, std::string("time.embed.weight").size(), "time.embed.wrongo");
    testing::write_file(dir / "c" / "manifest.txt", manifest);
    CHECK_THROWS_AS(load_checkpoint(dir / "c"), CorruptionError);
  }
  SUBCASE("garbled config") {
    testing::write_file(dir / "c" / "config.txt", "t_x=banana\n");
    CHECK_THROWS_AS(load_checkpoint(dir / "c"), CorruptionError);
  }
  SUBCASE("architecture mismatch") {
    auto other = rcfg;
    other.t_x = 16;
    CHECK_THROWS_AS(load_checkpoint(dir / "c", other), ConfigError);
  }
}
