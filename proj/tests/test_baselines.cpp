#include <cmath>

#include "doctest.h"
#include "haphazard/baselines.hpp"
#include "haphazard/streams.hpp"

using namespace haphazard;

namespace {

Instance inst_of(std::uint64_t t, std::vector<FeatureValue> fv, int label = 0) {
  Instance inst;
  inst.index = t;
  inst.features = std::move(fv);
  inst.label = label;
  return inst;
}

}  // namespace

TEST_CASE("imputation examples") {
  Imputer ff(3, ImputeMethod::Ffill);
  ff.impute(inst_of(0, {{1, 5.0}}));
  CHECK(ff.impute(inst_of(1, {{2, 1.0}})) == Vec{5.0, 1.0, 0.0});

  Imputer rm(2, ImputeMethod::RollingMean);
  for (double v : {1.0, 2.0, 3.0}) rm.impute(inst_of(0, {{1, v}}));
  CHECK(rm.impute(inst_of(3, {})) == Vec{2.0, 0.0});

  // window holds the last five genuine observations only
  for (double v : {10.0, 20.0, 30.0, 40.0, 50.0}) rm.impute(inst_of(0, {{1, v}}));
  for (int i = 0; i < 4; ++i) CHECK(rm.impute(inst_of(9, {{2, 1.0}}))[0] == 30.0);
  CHECK(rm.history()[0].window.size() == 5);

  CHECK_THROWS_AS(ff.impute(inst_of(5, {{4, 1.0}})), ConfigError);
  CHECK(parse_impute_method("rolling_mean") == ImputeMethod::RollingMean);
}

TEST_CASE("without missing values both methods agree") {
  Rng rng(2);
  std::vector<DenseRecord> recs(100);
  for (auto& r : recs) r.values = {rng.uniform(), rng.uniform(), rng.uniform()};
  const auto s = mask_bernoulli(recs, 1.0, 1);
  Imputer a(3, ImputeMethod::Ffill), b(3, ImputeMethod::RollingMean);
  for (const auto& inst : s) CHECK(a.impute(inst) == b.impute(inst));
}

TEST_CASE("single model") {
  SingleConfig cfg;
  cfg.n_features = 3;
  cfg.hidden = 5;

  SUBCASE("zero head gives ln 2") {
    auto z = cfg;
    z.head_init = InitScheme::Zeros;
    SingleModel m(z, 1);
    CHECK(m.learn_one(inst_of(0, {{1, 0.5}}, 1)).loss == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("state carries across instances") {
    SingleModel m(cfg, 1);
    m.learn_one(inst_of(0, {{1, 0.5}, {3, -1.0}}, 1));
    const Vec h1 = m.state().h;
    CHECK(h1 != Vec(5, 0.0));
    m.learn_one(inst_of(1, {{2, 0.1}}, 0));
    CHECK(m.state().h != h1);
    CHECK(m.state().t == 2);
  }
  SUBCASE("gradients match finite differences") {
    SingleModel m(cfg, 7);
    Rng rng(3);
    for (std::uint64_t t = 0; t < 8; ++t) {
      m.learn_one(inst_of(t, {{1, rng.uniform(-1, 1)}, {3, rng.uniform(-1, 1)}}, t % 2));
    }
    const Vec dense{0.3, -0.8, 1.1};
    const auto g = m.gradients(m.forward(dense), 1);
    auto check = [&](Vec& params, const Vec& analytic) {
      const Vec base = params;
      auto f = [&](std::span<const double> v) {
        params.assign(v.begin(), v.end());
        return softmax_xent(m.forward(dense).head.logits, 1).loss;
      };
      const Vec numeric = finite_diff_grad(f, base, 1e-6);
      params = base;
      std::size_t bad = 0;
      for (std::size_t i = 0; i < base.size(); ++i) bad += !grad_close(analytic[i], numeric[i]);
      CHECK(bad == 0);
    };
    check(m.mutable_state().cell.values, g.cell);
    check(m.mutable_state().head, g.head);
  }
  SUBCASE("parameter count") {
    SingleModel m(cfg, 1);
    // LSTM over d=3: 4(s*d + s*s + s); head s->s->2
    CHECK(m.parameter_count() == 4 * (5 * 3 + 25 + 5) + (25 + 5 + 10 + 2));
  }
}
