#include <doctest.h>

#include <random>

#include "hidformer/data.hpp"
#include "hidformer/error.hpp"
#include "test_support.hpp"

using namespace hidformer;
using namespace hidformer::data;
using hidformer::testing::TempDir;

namespace {

constexpr const char* kHeader = "Date,Open,High,Low,Close,Adj Close,Volume\n";

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("load_csv happy path sorts by date") {
  const auto r = parse_csv(std::string(kHeader) +
                               "2020-01-03,10,11,9,10.5,10.4,1000\n"
                               "2020-01-02,9.5,10.2,9.1,10,9.9,1200\n",
                           "TEST");
  REQUIRE(r.series.size() == 2);
  CHECK(r.skipped_rows == 0);
  CHECK(format_date(r.series.bars[0].date) == "2020-01-02");
  CHECK(r.series.bars[1].close == 10.5);
  CHECK(r.series.bars[0].volume == 1200);
}

TEST_CASE("load_csv skips null rows") {
  const auto r = parse_csv(std::string(kHeader) +
                               "2020-01-02,9.5,10.2,9.1,10,9.9,1200\n"
                               "2020-01-03,10,11,9,10.5,10.4,null\n"
                               "2020-01-06,10,11,9,10.5,10.4,900\r\n",
                           "TEST");
  CHECK(r.series.size() == 2);
  CHECK(r.skipped_rows == 1);
}

TEST_CASE("load_csv format errors") {
  CHECK(error_of([] {
          parse_csv("Date,Open,High,Low,Close,AdjClose,Volume\n2020-01-02,1,1,1,1,1,1\n", "X");
        }).find("line 1") != std::string::npos);
  CHECK_THROWS_AS(parse_csv("Date,Open,High,Low,Close,AdjClose,Volume\n", "X"), DataError);

  const auto msg = error_of([] {
    parse_csv(std::string(kHeader) + "2020-01-02,9.5,10.2,9.1,10,9.9,1200\n" +
                  "2020-01-03,10,abc,9,10.5,10.4,1000\n",
              "X");
  });
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK(msg.find("data:") == 0);

  CHECK(error_of([] { parse_csv(kHeader, "X"); }).find("no usable rows") != std::string::npos);
  CHECK_THROWS_AS(parse_csv(std::string(kHeader) + "2020-01-02,1,1,1,null,1,1\n", "X"), DataError);
  CHECK_THROWS_AS(parse_csv(std::string(kHeader) + "2020-13-02,1,1,1,1,1,1\n", "X"), DataError);
  CHECK_THROWS_AS(parse_csv(std::string(kHeader) + "2020-01-02,1,1,1,1,1\n", "X"), DataError);
  // Duplicate dates and bars whose range does not bracket open/close.
  CHECK_THROWS_AS(parse_csv(std::string(kHeader) + "2020-01-02,1,1,1,1,1,1\n2020-01-02,1,1,1,1,1,1\n",
                            "X"),
                  DataError);
  CHECK_THROWS_AS(parse_csv(std::string(kHeader) + "2020-01-02,5,4,1,2,2,1\n", "X"), DataError);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), DataError);
}

TEST_CASE("csv export and import are lossless") {
  TempDir dir("data");
  const auto series = testing::random_walk_series(200, 17);
  write_csv(series, dir / "WALK.csv");
  const auto back = load_csv(dir / "WALK.csv");
  CHECK(back.series.symbol == "WALK");
  CHECK(back.series.bars == series.bars);

  write_dataset_csv(series, 150, dir / "dataset.csv");
  const auto text = testing::read_file(dir / "dataset.csv");
  CHECK(text.starts_with("Date,Open,High,Low,Close,Adj Close,Volume,split\n"));
  CHECK(text.find(",train\n") != std::string::npos);
  CHECK(text.ends_with(",val\n"));
}

TEST_CASE("compute_norm_stats") {
  std::vector<Bar> one(1);
  one[0].open = one[0].high = one[0].low = one[0].close = one[0].adj_close = 10;
  one[0].volume = 5;
  CHECK_THROWS_AS(compute_norm_stats(one, {0, 1}), DataError);

  std::vector<Bar> bars(2);
  bars[0] = {{}, 6, 8, 5, 7, 7, 100};
  bars[1] = {{}, 10, 20, 9, 12, 11, 300};
  const auto s = compute_norm_stats(bars, {0, 2});
  CHECK(s.price_min == 5);
  CHECK(s.price_max == 20);
  CHECK(s.vol_min == 100);
  CHECK(s.vol_max == 300);
  CHECK_THROWS_AS(compute_norm_stats(bars, {1, 1}), ContractError);
}

TEST_CASE("normalize examples and round trip") {
  NormalizationStats s{0, 100, 0, 100};
  CHECK(normalize(50, Group::kPrice, s) == 0.5);
  CHECK(normalize(0, Group::kPrice, s) == 0.0);
  CHECK(normalize(100, Group::kPrice, s) == 1.0);
  CHECK(normalize(150, Group::kPrice, s) == 1.5);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1e7);
  for (int i = 0; i < 1000; ++i) {
    NormalizationStats st{u(rng) / 1e3, 0, u(rng), 0};
    st.price_max = st.price_min + 1.0 + u(rng) / 1e3;
    st.vol_max = st.vol_min + 1.0 + u(rng);
    const double p = u(rng) / 1e3, v = u(rng);
    CHECK(std::abs(denormalize(normalize(p, Group::kPrice, st), Group::kPrice, st) - p) <= 1e-9);
    CHECK(std::abs(denormalize(normalize(v, Group::kVolume, st), Group::kVolume, st) - v) <=
          1e-9 * std::max(1.0, v));
  }
}

TEST_CASE("split_train_val") {
  const auto series = testing::random_walk_series(1000, 5);
  const auto split = split_train_val(series.bars, 0.95);
  CHECK(split.train.size() == 950);
  CHECK(split.val.size() == 50);
  auto joined = split.train;
  joined.insert(joined.end(), split.val.begin(), split.val.end());
  CHECK(joined == series.bars);

  CHECK(train_count(20, 0.95) == 19);
  CHECK(train_count(10, 0.5) == 5);
  CHECK_THROWS_AS(train_count(10, 1.0), ConfigError);
  CHECK_THROWS_AS(train_count(10, 0.0), ConfigError);
}

TEST_CASE("make_windows counts and errors") {
  const auto series = testing::random_walk_series(300, 8);
  const auto stats = compute_norm_stats(series.bars, {0, 300});
  CHECK(make_windows(series.bars, {128, 128, 1}, stats).size() == 45);
  const std::span<const Bar> first256(series.bars.data(), 256);
  CHECK(make_windows(first256, {128, 128, 1}, stats).size() == 1);
  const std::span<const Bar> first255(series.bars.data(), 255);
  const auto msg = error_of([&] { make_windows(first255, {128, 128, 1}, stats); });
  CHECK(msg.find("insufficient data") != std::string::npos);
  CHECK(msg.find("256") != std::string::npos);
  CHECK(make_windows(series.bars, {10, 5, 3}, stats).size() == (300 - 15) / 3 + 1);
}

TEST_CASE("window contents and invariants") {
  const auto series = testing::random_walk_series(400, 21);
  const auto split = split_train_val(series.bars, 0.75);
  const auto stats = compute_norm_stats(series.bars, {0, split.train.size()});
  const WindowConfig cfg{16, 8, 1};
  const auto ds = make_windows(split.train, cfg, stats);
  REQUIRE(ds.size() == split.train.size() - 24 + 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(ds.origin_indices[i] == i);
    for (double v : ds.inputs[i]) CHECK((v >= 0.0 && v <= 1.0));
    for (double v : ds.targets[i]) CHECK((v >= 0.0 && v <= 1.0));
  }
  // Window 3: channels in fixed order, target starts right after the input.
  const auto& b = split.train[3];
  CHECK(ds.inputs[3][0] == normalize(b.open, Group::kPrice, stats));
  CHECK(ds.inputs[3][kVolume] == normalize(b.volume, Group::kVolume, stats));
  CHECK(ds.targets[3][0] == normalize(split.train[3 + 16].close, Group::kPrice, stats));
  CHECK(ds.last_input_close(3) == normalize(split.train[3 + 15].close, Group::kPrice, stats));
  // Consecutive stride-1 windows overlap in t_x + t_y - 1 bars: shifting
  // window i by one bar reproduces window i+1.
  for (std::size_t i = 0; i + 1 < ds.size(); ++i) {
    CHECK(std::equal(ds.inputs[i].begin() + kNumChannels, ds.inputs[i].end(),
                     ds.inputs[i + 1].begin()));
    CHECK(std::equal(ds.targets[i].begin() + 1, ds.targets[i].end(), ds.targets[i + 1].begin()));
  }
}

TEST_CASE("validation windows borrow training context") {
  const auto series = testing::random_walk_series(300, 4);
  const auto split = split_train_val(series.bars, 0.8);  // 240 / 60
  const auto stats = compute_norm_stats(series.bars, {0, 240});
  const auto val = make_validation_windows(split.train, split.val, {32, 16, 1}, stats);
  CHECK(val.size() == 60 - 16 + 1);
  for (std::size_t i = 0; i < val.size(); ++i) {
    // Every target bar lies in the validation period.
    CHECK(val.origin_indices[i] + 32 >= 240);
    CHECK(val.origin_indices[i] + 32 + 16 <= 300);
  }
  CHECK(val.targets[0][0] == normalize(split.val[0].close, Group::kPrice, stats));
}
