#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mtss/grad_check.hpp"
#include "mtss/graph.hpp"
#include "mtss/lasso.hpp"
#include "mtss/params.hpp"
#include "mtss/rng.hpp"
#include "mtss/trunk.hpp"

using namespace mtss;

namespace {

Tensor<double> random_input(std::uint64_t seed, const Shape& shape) {
  auto rng = RngStream::derive(seed, {1});
  Tensor<double> t(shape);
  for (auto& v : t.values) v = rng.uniform(0.05, 1.0);
  return t;
}

}  // namespace

TEST_CASE("fresh trunk passes the stem through every unit unchanged") {
  Graph<double> g;
  ParamStore<double> store(5);
  Binder<double> bind{g, store, {}};
  TrunkConfig cfg;
  cfg.width = 4;
  cfg.units = 5;
  NodeId x = g.input(random_input(21, {2, 3, 6, 6}));
  auto units = trunk_forward(g, x, cfg, bind);
  REQUIRE(units.size() == 5);
  // residual second convs are zero-initialized, so each unit is the identity
  const auto& stem = g.value(units[0] - 5);  // conv node right before unit 1's relu chain
  for (auto u : units) {
    CHECK(g.shape(u) == Shape{2, 4, 6, 6});
    CHECK(g.value(u) == g.value(units[0]));
    for (auto v : g.value(u)) CHECK(std::isfinite(v));
  }
  (void)stem;
}

TEST_CASE("single-unit trunk degenerates to one output") {
  Graph<double> g;
  ParamStore<double> store(6);
  Binder<double> bind{g, store, {}};
  TrunkConfig cfg;
  cfg.width = 3;
  cfg.units = 1;
  NodeId x = g.input(random_input(22, {1, 3, 4, 4}));
  auto units = trunk_forward(g, x, cfg, bind);
  REQUIRE(units.size() == 1);
  CHECK(g.shape(units[0]) == Shape{1, 3, 4, 4});
}

TEST_CASE("perturbing unit k reaches only units at depth >= k") {
  Graph<double> g;
  ParamStore<double> store(7);
  Binder<double> bind{g, store, {}};
  TrunkConfig cfg;
  cfg.width = 4;
  cfg.units = 4;
  NodeId x = g.input(random_input(23, {1, 3, 5, 5}));
  auto units = trunk_forward(g, x, cfg, bind);

  // give every residual branch a live second conv so changes propagate
  auto rng = RngStream::derive(24, {1});
  for (std::int64_t m = 1; m <= cfg.units; ++m)
    for (auto& v : store.get(unit_param(m, "conv2/w")).values) v = rng.uniform(-0.3, 0.3);
  bind.reload();
  g.forward();
  std::vector<std::vector<double>> base;
  for (auto u : units) base.push_back(g.value(u));

  for (std::int64_t k = 1; k <= cfg.units; ++k) {
    for (const char* leaf : {"conv1/w", "conv2/w"}) {
      auto saved = store.get(unit_param(k, leaf)).values;
      for (auto& v : store.get(unit_param(k, leaf)).values) v += 0.05;
      bind.reload();
      g.forward();
      for (std::int64_t j = 1; j <= cfg.units; ++j) {
        bool changed = g.value(units[std::size_t(j - 1)]) != base[std::size_t(j - 1)];
        if (j < k) {
          CHECK_FALSE(changed);
        } else {
          CHECK(changed);
        }
      }
      store.get(unit_param(k, leaf)).values = saved;
    }
  }
}

TEST_CASE("parameter store initializes independently of creation order") {
  ParamStore<double> a(42), b(42);
  auto& x1 = a.ensure("p/one", {3, 3}, Init::He);
  auto& y1 = a.ensure("p/two", {4}, Init::UnitUniform);
  auto& y2 = b.ensure("p/two", {4}, Init::UnitUniform);
  auto& x2 = b.ensure("p/one", {3, 3}, Init::He);
  CHECK(x1.values == x2.values);
  CHECK(y1.values == y2.values);
  ParamStore<double> c(43);
  CHECK(c.ensure("p/one", {3, 3}, Init::He).values != x1.values);
  CHECK_THROWS(a.ensure("p/one", {2, 2}, Init::He));
  CHECK_THROWS(a.get("missing"));
}

TEST_CASE("basis row reproduces a single unit exactly") {
  Graph<double> g;
  ParamStore<double> store(8);
  Binder<double> bind{g, store, {}};
  TrunkConfig cfg;
  cfg.width = 3;
  cfg.units = 4;
  NodeId x = g.input(random_input(25, {1, 3, 4, 4}));
  auto units = trunk_forward(g, x, cfg, bind);
  // make units distinct
  auto rng = RngStream::derive(26, {1});
  for (std::int64_t m = 1; m <= cfg.units; ++m)
    for (auto& v : store.get(unit_param(m, "conv2/w")).values) v = rng.uniform(-0.3, 0.3);
  auto row = alpha_row(g, bind, "pretrain", "probe", cfg.units);
  store.get(row.name).values = {1.0, 0.0, 0.0, 0.0};
  NodeId combined = lasso_combine(g, row.alpha, units);
  bind.reload();
  g.forward();
  CHECK(g.value(combined) == g.value(units[0]));
}

TEST_CASE("three-four-zero row combines with normalized weights") {
  Graph<double> g;
  ParamStore<double> store(9);
  Binder<double> bind{g, store, {}};
  TrunkConfig cfg;
  cfg.width = 3;
  cfg.units = 3;
  NodeId x = g.input(random_input(27, {2, 3, 4, 4}));
  auto units = trunk_forward(g, x, cfg, bind);
  auto rng = RngStream::derive(28, {1});
  for (std::int64_t m = 1; m <= cfg.units; ++m)
    for (auto& v : store.get(unit_param(m, "conv2/w")).values) v = rng.uniform(-0.3, 0.3);
  auto row = alpha_row(g, bind, "pretrain", "probe", 3);
  store.get(row.name).values = {3.0, 4.0, 0.0};
  NodeId combined = lasso_combine(g, row.alpha, units);
  bind.reload();
  g.forward();
  CHECK(g.value(row.alpha)[0] == Catch::Approx(0.6).margin(1e-15));
  CHECK(g.value(row.alpha)[1] == Catch::Approx(0.8).margin(1e-15));
  const auto& u1 = g.value(units[0]);
  const auto& u2 = g.value(units[1]);
  const auto& out = g.value(combined);
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == Catch::Approx(0.6 * u1[i] + 0.8 * u2[i]).margin(1e-12));
}

TEST_CASE("combined output is invariant under positive row rescaling") {
  Graph<double> g;
  ParamStore<double> store(10);
  Binder<double> bind{g, store, {}};
  TrunkConfig cfg;
  cfg.width = 4;
  cfg.units = 6;
  NodeId x = g.input(random_input(29, {1, 3, 5, 5}));
  auto units = trunk_forward(g, x, cfg, bind);
  auto rng = RngStream::derive(30, {1});
  for (std::int64_t m = 1; m <= cfg.units; ++m)
    for (auto& v : store.get(unit_param(m, "conv2/w")).values) v = rng.uniform(-0.3, 0.3);
  auto row = alpha_row(g, bind, "pretrain", "probe", cfg.units);
  NodeId combined = lasso_combine(g, row.alpha, units);
  bind.reload();
  g.forward();
  auto base = g.value(combined);

  for (double c : {7.3, 0.004, 1e6}) {
    auto scaled = store.get(row.name).values;
    for (auto& v : scaled) v *= c;
    g.set_leaf(bind.nodes[row.name], scaled);
    g.forward();
    const auto& out = g.value(combined);
    double scale = 0;
    for (auto v : base) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(std::abs(out[i] - base[i]) <= 1e-12 * std::max(1.0, scale));
  }
}

TEST_CASE("row normalization is exact and idempotent") {
  auto rng = RngStream::derive(31, {1});
  for (int rep = 0; rep < 50; ++rep) {
    Graph<double> g;
    Tensor<double> beta({8});
    for (auto& v : beta.values) v = rng.uniform(-2, 2);
    NodeId b = g.input(beta);
    NodeId a1 = g.apply(Kind::L2Normalize, {b});
    NodeId a2 = g.apply(Kind::L2Normalize, {a1});
    double sq = 0;
    for (auto v : g.value(a1)) sq += v * v;
    CHECK(std::abs(sq - 1.0) <= 1e-9);
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(std::abs(g.value(a2)[i] - g.value(a1)[i]) <= 1e-15);
  }
}

TEST_CASE("penalty matches hand arithmetic and the Cauchy-Schwarz band") {
  {
    Graph<double> g;
    NodeId beta = g.input(Tensor<double>({2}, {3.0, 4.0}));
    NodeId alpha = g.apply(Kind::L2Normalize, {beta});
    NodeId p1 = lasso_penalty(g, alpha, 1.0);
    NodeId p0 = lasso_penalty(g, alpha, 0.0);
    CHECK(g.value(p1)[0] == Catch::Approx(1.4).margin(1e-12));
    CHECK(g.value(p0)[0] == 0.0);
    CHECK_THROWS(lasso_penalty(g, alpha, -0.5));
  }
  auto rng = RngStream::derive(32, {1});
  const std::int64_t m = 9;
  for (int rep = 0; rep < 100; ++rep) {
    Graph<double> g;
    Tensor<double> beta({m});
    for (auto& v : beta.values) v = rng.uniform(-3, 3);
    NodeId alpha = g.apply(Kind::L2Normalize, {g.input(beta)});
    NodeId p = lasso_penalty(g, alpha, 1.0);
    CHECK(g.value(p)[0] >= 1.0 - 1e-12);
    CHECK(g.value(p)[0] <= std::sqrt(double(m)) + 1e-12);
  }
}

TEST_CASE("beta gradients through combine and penalty pass the difference check") {
  Graph<double> g;
  ParamStore<double> store(11);
  Binder<double> bind{g, store, {}};
  TrunkConfig cfg;
  cfg.width = 3;
  cfg.units = 3;
  NodeId x = g.input(random_input(33, {1, 3, 4, 4}));
  auto units = trunk_forward(g, x, cfg, bind);
  auto rng = RngStream::derive(34, {1});
  for (std::int64_t m = 1; m <= cfg.units; ++m)
    for (auto& v : store.get(unit_param(m, "conv2/w")).values) v = rng.uniform(-0.3, 0.3);
  auto row = alpha_row(g, bind, "pretrain", "probe", cfg.units);
  // keep entries away from the |.| kink so central differences are clean
  store.get(row.name).values = {0.7, -0.5, 0.9};
  NodeId combined = lasso_combine(g, row.alpha, units);
  NodeId loss = g.apply(Kind::Add, {g.apply(Kind::ReduceMean, {combined}),
                                    lasso_penalty(g, row.alpha, 0.5)});
  bind.reload();
  g.forward();
  auto rep = grad_check(g, loss, 1e-6, 1e-5);
  INFO(rep.summary());
  CHECK(rep.pass);
}

TEST_CASE("sparsity rows report the fraction of near-dead entries") {
  Tensor<double> basis({6}, {0.0, 0.0, 1.0, 0.0, 0.0, 0.0});
  auto r1 = sparsity_row("probe", basis, 0.01);
  CHECK(r1.abs_alpha == std::vector<double>{0, 0, 1, 0, 0, 0});
  CHECK(r1.fraction_below == Catch::Approx(5.0 / 6.0));

  Tensor<double> uniform({4}, {0.5, -0.5, 0.5, 0.5});
  auto r2 = sparsity_row("probe", uniform, 0.49);
  CHECK(r2.fraction_below == 0.0);
  for (auto a : r2.abs_alpha) CHECK(a == Catch::Approx(0.5).margin(1e-15));

  CHECK_THROWS(sparsity_row("probe", Tensor<double>({3}, {0, 0, 0}), 0.1));
}
