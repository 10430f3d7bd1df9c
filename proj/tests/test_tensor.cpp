#include <cmath>
#include <random>

#include "doctest.h"
#include "sat/gradcheck.hpp"
#include "sat/ops.hpp"
#include "sat/optim.hpp"

using namespace sat;

namespace {

Tensor random_leaf(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v)).set_requires_grad(true);
}

// Random weights so that a scalar reduction of `y` exercises every output.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = u(rng);
  return sum(mul(y, Tensor::from(y.shape(), w)));
}

void expect_gradients(const std::function<Tensor()>& f, std::vector<NamedTensor> leaves,
                      double tol = 1e-6) {
  const auto report = check_gradients(f, std::move(leaves));
  INFO("worst " << report.worst.name << "[" << report.worst.index << "] analytic "
                << report.worst.analytic << " numeric " << report.worst.numeric);
  CHECK(report.max_rel_error() < tol);
}

}  // namespace

TEST_CASE("matmul matches a hand-computed product") {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.at(0, 0) == 58.0);
  CHECK(c.at(0, 1) == 64.0);
  CHECK(c.at(1, 0) == 139.0);
  CHECK(c.at(1, 1) == 154.0);
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("batched matmul and transpose agree with per-slice products") {
  std::mt19937_64 rng(3);
  const Tensor a = random_leaf({3, 2, 4}, rng);
  const Tensor b = random_leaf({3, 4, 5}, rng);
  const Tensor c = matmul(a, b);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < 4; ++p) s += a.at(t, i, p) * b.at(t, p, j);
        CHECK(c.at(t, i, j) == doctest::Approx(s).epsilon(1e-14));
      }
    }
  }
  const Tensor bt = transpose(b);
  CHECK(bt.shape() == Shape{3, 5, 4});
  CHECK(bt.at(2, 4, 1) == b.at(2, 1, 4));
}

TEST_CASE("gradients of elementwise and shape ops match finite differences") {
  std::mt19937_64 rng(11);
  Tensor a = random_leaf({3, 4}, rng);
  Tensor b = random_leaf({3, 4}, rng);
  Tensor r = random_leaf({4}, rng);
  Tensor w = random_leaf({4, 2}, rng);
  Tensor bw = random_leaf({3, 4, 2}, rng);
  Tensor a3 = random_leaf({3, 3, 4}, rng);

  expect_gradients([&] { return weighted_sum(add(a, b), 1); }, {{"a", a}, {"b", b}});
  expect_gradients([&] { return weighted_sum(sub(a, b), 2); }, {{"a", a}, {"b", b}});
  expect_gradients([&] { return weighted_sum(mul(a, b), 3); }, {{"a", a}, {"b", b}});
  expect_gradients([&] { return weighted_sum(scale(a, -1.7), 4); }, {{"a", a}});
  expect_gradients([&] { return weighted_sum(add_row(a, r), 5); }, {{"a", a}, {"r", r}});
  expect_gradients([&] { return weighted_sum(gelu(a), 6); }, {{"a", a}});
  expect_gradients([&] { return weighted_sum(matmul(a, w), 7); }, {{"a", a}, {"w", w}});
  expect_gradients([&] { return weighted_sum(matmul(a3, bw), 8); }, {{"a3", a3}, {"bw", bw}});
  expect_gradients([&] { return weighted_sum(transpose(a3), 9); }, {{"a3", a3}});
  expect_gradients([&] { return weighted_sum(concat_rows({a, b, slice_rows(a, 1, 2)}), 10); },
                   {{"a", a}, {"b", b}});
  expect_gradients([&] { return weighted_sum(concat_cols(a, matmul(a, w)), 11); },
                   {{"a", a}, {"w", w}});
  expect_gradients([&] { return weighted_sum(merge_heads(split_heads(a, 2)), 12); },
                   {{"a", a}});
  expect_gradients([&] { return weighted_sum(split_heads(a, 2), 13); }, {{"a", a}});
  expect_gradients([&] { return mean(mul(a, a)); }, {{"a", a}});
}

TEST_CASE("layer norm: statistics, gradients and the degenerate case") {
  std::mt19937_64 rng(5);
  Tensor x = random_leaf({4, 6}, rng, -3.0, 3.0);
  Tensor g = random_leaf({6}, rng, 0.5, 1.5);
  Tensor s = random_leaf({6}, rng);
  const Tensor ones = Tensor::full({6}, 1.0);
  const Tensor zeros = Tensor::zeros({6});
  const Tensor y = layer_norm(x, ones, zeros, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 6; ++j) m += y.at(i, j) / 6.0;
    for (std::size_t j = 0; j < 6; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m) / 6.0;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  expect_gradients([&] { return weighted_sum(layer_norm(x, g, s, 1e-5), 21); },
                   {{"x", x}, {"g", g}, {"s", s}});
  const Tensor one = Tensor::from({2, 1}, {1.0, 2.0});
  CHECK_THROWS_AS(layer_norm(one, Tensor::full({1}, 1.0), Tensor::zeros({1}), 0.0),
                  std::domain_error);
}

TEST_CASE("masked softmax zeroes masked entries and empty rows") {
  const Tensor logits = Tensor::from({2, 3}, {1.0, 2.0, 3.0, 0.5, 0.5, 0.5});
  const Tensor bias = Tensor::from({2, 3}, {0.0, kMasked, 0.0, kMasked, kMasked, kMasked});
  const Tensor w = masked_softmax(logits, bias);
  const double z = std::exp(1.0) + std::exp(3.0);
  CHECK(w.at(0, 0) == doctest::Approx(std::exp(1.0) / z));
  CHECK(w.at(0, 1) == 0.0);
  CHECK(w.at(0, 2) == doctest::Approx(std::exp(3.0) / z));
  for (std::size_t j = 0; j < 3; ++j) CHECK(w.at(1, j) == 0.0);

  std::mt19937_64 rng(9);
  Tensor l = random_leaf({2, 4, 4}, rng, -2.0, 2.0);
  std::vector<double> mask(32, 0.0);
  for (std::size_t i = 0; i < 32; i += 3) mask[i] = kMasked;
  for (std::size_t j = 12; j < 16; ++j) mask[j] = kMasked;  // one fully masked row
  const Tensor b = Tensor::from({2, 4, 4}, mask);
  expect_gradients([&] { return weighted_sum(masked_softmax(l, b), 31); }, {{"l", l}});
}

TEST_CASE("embedding gathers rows and scatters gradients") {
  std::mt19937_64 rng(4);
  Tensor table = random_leaf({5, 3}, rng);
  const std::vector<std::size_t> ids = {4, 0, 4};
  const Tensor e = embedding(table, ids);
  CHECK(e.at(0, 2) == table.at(4, 2));
  CHECK(e.at(1, 1) == table.at(0, 1));
  expect_gradients([&] { return weighted_sum(embedding(table, ids), 41); }, {{"t", table}});
  const std::vector<std::size_t> bad = {5};
  CHECK_THROWS(embedding(table, bad));
}

TEST_CASE("bce with logits matches the closed form and its gradient") {
  const Tensor logits = Tensor::from({2, 2}, {0.3, -1.2, 2.0, 0.1});
  const std::vector<double> targets = {1, 0, 0, 1};
  const std::vector<double> mask = {1, 1};
  auto term = [](double x, double y) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y;
  };
  const double expected =
      (term(0.3, 1) + term(-1.2, 0) + term(2.0, 0) + term(0.1, 1)) / 2.0;
  CHECK(bce_with_logits(logits, targets, mask).item() == doctest::Approx(expected));

  const std::vector<double> half = {1, 0};
  CHECK(bce_with_logits(logits, targets, half).item() ==
        doctest::Approx(term(0.3, 1) + term(-1.2, 0)));

  std::mt19937_64 rng(8);
  Tensor l = random_leaf({3, 4}, rng, -4.0, 4.0);
  const std::vector<double> t = {1, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 1};
  const std::vector<double> m = {1, 0, 1};
  expect_gradients([&] { return bce_with_logits(l, t, m); }, {{"l", l}});
}

TEST_CASE("relation bias adds beta only on attended entries") {
  Tensor beta = Tensor::from({1, 3}, {0.5, -1.0, 2.0}).set_requires_grad(true);
  const std::vector<double> mask = {0.0, kMasked, 0.0, 0.0};
  const std::vector<int> slot = {0, 1, -1, 2};
  const Tensor b = relation_bias(beta, mask, slot, 1, 2);
  CHECK(b.at(0, 0, 0) == 0.5);
  CHECK(std::isinf(b.at(0, 0, 1)));
  CHECK(b.at(0, 1, 0) == 0.0);
  CHECK(b.at(0, 1, 1) == 2.0);
}

TEST_CASE("dropout is the identity at p = 0 and preserves the mean otherwise") {
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::full({100, 100}, 1.0);
  const Tensor same = dropout(x, 0.0, rng);
  CHECK(std::equal(same.data().begin(), same.data().end(), x.data().begin()));
  const Tensor d = dropout(x, 0.25, rng);
  double total = 0.0;
  for (double v : d.data()) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12));
    total += v;
  }
  CHECK(total / 10000.0 == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("backward accumulates into leaves and no-grad mode records nothing") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}).set_requires_grad(true);
  backward(sum(mul(x, x)));
  backward(sum(x));
  const auto g = x.grad();
  CHECK(g[0] == 3.0);  // 2x + 1
  CHECK(g[1] == 5.0);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("log softmax is normalized and stable") {
  const std::vector<double> s = {1000.0, 1001.0, 999.0};
  const auto lp = log_softmax(s);
  double z = 0.0;
  for (double v : lp) z += std::exp(v);
  CHECK(z == doctest::Approx(1.0));
  CHECK(lp[1] > lp[0]);
}

TEST_CASE("gradient clipping scales a norm-1 gradient by the clip value") {
  Parameter p("p", Tensor::from({2}, {0.0, 0.0}).set_requires_grad(true));
  auto g = p.tensor.mutable_grad();
  g[0] = 0.6;
  g[1] = 0.8;
  std::vector<Parameter*> params = {&p};
  CHECK(clip_grad_norm(params, 0.25) == doctest::Approx(1.0));
  const auto clipped = p.tensor.grad();
  CHECK(clipped[0] == doctest::Approx(0.15));
  CHECK(clipped[1] == doctest::Approx(0.2));
  CHECK(grad_norm(params) == doctest::Approx(0.25));
}

TEST_CASE("adam step matches the bias-corrected update") {
  Parameter p("p", Tensor::from({1}, {1.0}).set_requires_grad(true));
  std::vector<Parameter*> params = {&p};
  const AdamOptions o;
  double m = 0.0, v = 0.0, x = 1.0;
  const double grads[] = {0.5, -0.2, 0.1};
  for (int t = 1; t <= 3; ++t) {
    zero_grads(params);
    p.tensor.mutable_grad()[0] = grads[t - 1];
    adam_step(params, 0.01, 0.0, o);
    m = o.beta1 * m + (1 - o.beta1) * grads[t - 1];
    v = o.beta2 * v + (1 - o.beta2) * grads[t - 1] * grads[t - 1];
    const double mh = m / (1 - std::pow(o.beta1, t));
    const double vh = v / (1 - std::pow(o.beta2, t));
    x -= 0.01 * mh / (std::sqrt(vh) + o.eps);
    CHECK(p.tensor.at(0) == doctest::Approx(x).epsilon(1e-12));
  }
}
