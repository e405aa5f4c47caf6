#include <doctest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <unordered_set>

#include "hidformer/error.hpp"
#include "hidformer/tensor.hpp"
#include "test_support.hpp"

using namespace hidformer;
using hidformer::testing::random_values;

namespace {

Tensor param(Shape shape, std::vector<double> values) {
  return Tensor::from(std::move(shape), std::move(values), true);
}

// Reduces any tensor to a scalar with distinct weights per entry so that
// every output coordinate contributes a different gradient.
Tensor probe(const Tensor& t) {
  std::vector<double> w(t.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return sum(mul(t, Tensor::from(t.shape(), w)));
}

void check_grad(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  const auto report = finite_diff_check(f, params, 1e-5, 1e-4);
  INFO(report.diagnostic);
  CHECK(report.passed);
  CHECK(report.coordinates_checked > 0);
}

}  // namespace

TEST_CASE("matmul examples") {
  const auto identity = Tensor::from({2, 2}, {1, 0, 0, 1});
  const auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(identity, m).to_vector() == std::vector<double>{1, 2, 3, 4});

  const auto z = matmul(Tensor::zeros({2, 3}), Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}));
  CHECK(z.shape() == Shape{2, 2});
  CHECK(z.to_vector() == std::vector<double>{0, 0, 0, 0});

  const auto col = matmul(m, Tensor::from({2, 1}, {5, 6}));
  CHECK(col.shape() == Shape{2, 1});
  CHECK(col.to_vector() == std::vector<double>{17, 39});

  CHECK_THROWS_AS(matmul(m, Tensor::zeros({3, 1})), ContractError);
}

TEST_CASE("affine examples") {
  const auto x = Tensor::from({1, 2}, {1, 1});
  const auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(affine(x, eye, Tensor::zeros({2})).to_vector() == std::vector<double>{1, 1});
  CHECK(affine(Tensor::zeros({3, 2}), eye, Tensor::from({2}, {2, 3})).to_vector() ==
        std::vector<double>{2, 3, 2, 3, 2, 3});
  CHECK(affine(x, eye, Tensor::from({2}, {2, 3})).to_vector() == std::vector<double>{3, 4});
  // Leading axes are batch axes.
  const auto batched = affine(Tensor::zeros({2, 3, 2}), eye, Tensor::from({2}, {1, 2}));
  CHECK(batched.shape() == Shape{2, 3, 2});
  CHECK_THROWS_AS(affine(Tensor::zeros({1, 3}), eye, Tensor::zeros({2})), ContractError);
  CHECK_THROWS_AS(affine(x, eye, Tensor::zeros({3})), ContractError);
}

TEST_CASE("feature map values") {
  CHECK(feature_map_value(0.0) == 1.0);
  CHECK(feature_map_value(2.0) == 3.0);
  CHECK(feature_map_value(-1.0) == doctest::Approx(0.36787944117144233).epsilon(1e-15));
  const auto out = feature_map(Tensor::from({3}, {0.0, 2.0, -1.0}));
  CHECK(out.at(2) == std::exp(-1.0));
  std::mt19937_64 rng(5);
  for (double u : random_values(200, rng)) CHECK(feature_map_value(u * 30.0) > 0.0);
}

TEST_CASE("layer_norm examples") {
  const auto ones = Tensor::full({3}, 1.0);
  const auto zeros = Tensor::zeros({3});
  CHECK(layer_norm(Tensor::full({1, 3}, 4.2), ones, zeros).to_vector() ==
        std::vector<double>{0, 0, 0});

  const auto y = layer_norm(Tensor::from({2}, {1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2}),
                            1e-15);
  CHECK(y.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(-1.0).epsilon(1e-12));

  const auto beta = Tensor::from({3}, {0.5, -2.0, 7.0});
  CHECK(layer_norm(Tensor::from({2, 3}, {1, 5, -3, 0.1, 9, 2}), Tensor::zeros({3}), beta)
            .to_vector() == std::vector<double>{0.5, -2, 7, 0.5, -2, 7});
  CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 3}), ones, zeros, 0.0), ContractError);
}

TEST_CASE("rdft examples") {
  CHECK(rdft(Tensor::zeros({4})).to_vector() == std::vector<double>(6, 0.0));

  const double c = 2.5;
  CHECK(rdft(Tensor::full({4}, c)).to_vector() == std::vector<double>{4 * c, 0, 0, 0, 0, 0});

  const auto cosine = rdft(Tensor::from({4}, {1, 0, -1, 0}));
  CHECK(cosine.to_vector() == std::vector<double>{0, 2, 0, 0, 0, 0});

  // Direct DFT sum on an odd length as an independent oracle.
  std::mt19937_64 rng(11);
  const auto x = random_values(7, rng);
  const auto out = rdft(Tensor::from({7}, x)).to_vector();
  REQUIRE(out.size() == 8);
  for (std::size_t k = 0; k < 4; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < 7; ++n) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k * n) / 7.0;
      re += x[n] * std::cos(angle);
      im -= x[n] * std::sin(angle);
    }
    CHECK(out[k] == doctest::Approx(re).epsilon(1e-12));
    CHECK(out[4 + k] == doctest::Approx(im).epsilon(1e-12));
  }
}

TEST_CASE("rdft concentrates a pure sinusoid in its bin") {
  for (std::size_t len : {8u, 16u, 32u, 33u}) {
    for (std::size_t k = 1; k < len / 2; ++k) {
      std::vector<double> x(len);
      for (std::size_t n = 0; n < len; ++n) {
        x[n] = std::cos(2.0 * std::numbers::pi * static_cast<double>(k * n) /
                        static_cast<double>(len));
      }
      const auto out = rdft(Tensor::from({len}, x)).to_vector();
      const auto bins = len / 2 + 1;
      for (std::size_t b = 0; b < bins; ++b) {
        if (b == k) {
          CHECK(out[b] == doctest::Approx(static_cast<double>(len) / 2.0).epsilon(1e-12));
        } else {
          CHECK(std::abs(out[b]) < 1e-10);
        }
        CHECK(std::abs(out[bins + b]) < 1e-10);
      }
    }
  }
}

TEST_CASE("backward examples") {
  SUBCASE("square") {
    auto x = Tensor::scalar(3.0, true);
    backward(mul(x, x));
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("constant loss leaves gradients at zero") {
    auto x = Tensor::scalar(3.0, true);
    const auto c = Tensor::scalar(5.0);
    backward(add(c, c));
    CHECK(x.grad()[0] == 0.0);
  }
  SUBCASE("fan-out accumulates") {
    auto x = Tensor::scalar(1.0, true);
    backward(add(x, x));
    CHECK(x.grad()[0] == 2.0);
  }
  SUBCASE("repeated backward accumulates into leaves") {
    auto x = Tensor::scalar(2.0, true);
    const auto loss = mul(x, x);
    backward(loss);
    backward(loss);
    CHECK(x.grad()[0] == 8.0);
  }
  SUBCASE("non-scalar loss") {
    auto x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(x), ContractError);
  }
}

TEST_CASE("tape is topological and visits each node once") {
  auto a = param({2, 2}, {1, 2, 3, 4});
  auto b = param({2, 2}, {0.5, -1, 2, 0.25});
  const auto ab = matmul(a, b);
  const auto shared = feature_map(ab);
  const auto loss = sum(add(mul(shared, shared), matmul(shared, a)));
  ComputationTape tape(loss);
  const auto& nodes = tape.nodes();
  std::unordered_set<const detail::Node*> seen;
  for (const auto* node : nodes) {
    CHECK(seen.insert(node).second);
    for (const auto& parent : node->parents) {
      if (parent->requires_grad) CHECK(seen.count(parent.get()) == 1);
    }
  }
  CHECK(nodes.back() == loss.node().get());
  CHECK(seen.count(shared.node().get()) == 1);
}

TEST_CASE("finite_diff_check examples") {
  auto p = param({2}, {1, 2});
  std::vector<Tensor> params{p};
  const auto report = finite_diff_check([&] { return sum(mul(p, p)); }, params, 1e-5, 1e-6);
  CHECK(report.passed);
  CHECK(report.max_relative_error < 1e-6);
  p.zero_grad();
  backward(sum(mul(p, p)));
  CHECK(p.grad()[0] == 2.0);
  CHECK(p.grad()[1] == 4.0);

  auto q = param({3}, {1, 2, 3});
  std::vector<Tensor> qs{q};
  const auto flat = finite_diff_check([] { return Tensor::scalar(4.0); }, qs, 1e-5, 1e-6);
  CHECK(flat.passed);
  CHECK(flat.max_relative_error == 0.0);
  for (double g : q.grad()) CHECK(g == 0.0);

  // Overflow inside the objective is reported, not thrown.
  auto r = param({1}, {700.0});
  std::vector<Tensor> rs{r};
  const auto bad = finite_diff_check([&] { return sum(scale(r, 1e306)); }, rs, 1e-5, 1e-4);
  CHECK_FALSE(bad.passed);
  CHECK_FALSE(bad.diagnostic.empty());
}

TEST_CASE("every primitive matches finite differences on random inputs") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = param({3, 4}, random_values(12, rng));
    auto b = param({4, 2}, random_values(8, rng));
    auto bias = param({2}, random_values(2, rng));
    auto c = param({3, 4}, random_values(12, rng));
    auto g = param({4}, random_values(4, rng));
    auto beta = param({4}, random_values(4, rng));
    auto den = param({3, 1}, random_values(3, rng));
    // Keep the divisor away from zero.
    for (auto& v : den.mutable_data()) v = 1.5 + v;
    // Keep relu inputs away from the kink.
    auto r = param({3, 4}, random_values(12, rng));
    for (auto& v : r.mutable_data()) v += v >= 0 ? 1e-3 : -1e-3;

    check_grad([&] { return probe(matmul(a, b)); }, {a, b});
    check_grad([&] { return probe(transpose(a)); }, {a});
    check_grad([&] { return probe(affine(a, b, bias)); }, {a, b, bias});
    check_grad([&] { return probe(add(a, c)); }, {a, c});
    check_grad([&] { return probe(sub(a, c)); }, {a, c});
    check_grad([&] { return probe(mul(a, c)); }, {a, c});
    check_grad([&] { return probe(scale(a, -2.5)); }, {a});
    check_grad([&] { return probe(relu(r)); }, {r});
    check_grad([&] { return probe(feature_map(a)); }, {a});
    check_grad([&] { return probe(layer_norm(a, g, beta)); }, {a, g, beta});
    check_grad([&] { return probe(rdft(a)); }, {a});
    check_grad([&] { return probe(reshape(a, {2, 6})); }, {a});
    check_grad([&] { return probe(slice_rows(a, 1, 3)); }, {a});
    check_grad([&] { return probe(pad_rows(a, 2)); }, {a});
    check_grad([&] { return probe(concat_rows({a, c})); }, {a, c});
    check_grad([&] { return probe(concat_flat({a, b})); }, {a, b});
    check_grad([&] { return probe(div_rows(a, den, 1e-8)); }, {a, den});
    check_grad([&] { return sum(a); }, {a});
  }
}

TEST_CASE("matmul is associative on random matrices") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = Tensor::from({3, 4}, random_values(12, rng));
    const auto b = Tensor::from({4, 5}, random_values(20, rng));
    const auto c = Tensor::from({5, 2}, random_values(10, rng));
    const auto left = matmul(matmul(a, b), c).to_vector();
    const auto right = matmul(a, matmul(b, c)).to_vector();
    for (std::size_t i = 0; i < left.size(); ++i) CHECK(std::abs(left[i] - right[i]) <= 1e-10);
  }
}

TEST_CASE("identical inputs give bit-identical outputs") {
  auto run = [] {
    std::mt19937_64 rng(42);
    auto a = param({4, 4}, random_values(16, rng));
    auto g = param({4}, random_values(4, rng));
    auto beta = param({4}, random_values(4, rng));
    const auto loss = probe(feature_map(layer_norm(matmul(a, transpose(a)), g, beta)));
    backward(loss);
    auto out = a.grad();
    std::vector<std::uint64_t> bits{std::bit_cast<std::uint64_t>(loss.item())};
    for (double v : out) bits.push_back(std::bit_cast<std::uint64_t>(v));
    return bits;
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite values are errors") {
  CHECK_THROWS_AS(Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  const auto big = Tensor::from({1}, {1e300});
  CHECK_THROWS_AS(mul(big, big), NumericError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ContractError);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ContractError);
}
