#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "bladecomp/analytics.hpp"
#include "bladecomp/fixtures.hpp"
#include "support/oracles.hpp"

using namespace bladecomp;
using namespace bladecomp::analytics;

namespace {

PairSeries series_of(std::vector<double> s, int first = 1) {
  PairSeries ps;
  ps.pair_key = "2+17";
  for (std::size_t i = 0; i < s.size(); ++i) ps.parts.push_back(first + static_cast<int>(i));
  ps.s = std::move(s);
  return ps;
}

PairSeries random_series(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> dev(-0.01, 0.01);
  PairSeries ps;
  ps.pair_key = "5+20";
  int part = 1 + static_cast<int>(rng() % 3);
  for (int i = 0; i < n; ++i) {
    ps.parts.push_back(part);
    part += 1 + static_cast<int>(rng() % 2);
    ps.s.push_back(dev(rng));
  }
  if (rng() % 2) ps.pathing = dev(rng) / 2;
  return ps;
}

}  // namespace

TEST_CASE("pair key convention") {
  CHECK(PairKey::parse("2+17").str() == "2+17");
  CHECK(PairKey::parse(" 16 + 31 ").pressure == 16);
  CHECK_THROWS_AS(PairKey::parse("2+18"), Error);
  CHECK_THROWS_AS(PairKey::parse("x+17"), Error);
  CHECK_THROWS_AS(PairKey::parse("2-17"), Error);
}

TEST_CASE("pair measurement arithmetic") {
  auto m = make_pair_measurement("2+17", 1, 0.002, 0.001);
  CHECK(m.v == doctest::Approx(0.003).epsilon(1e-15));
  CHECK(m.s == doctest::Approx(0.0015).epsilon(1e-15));
  auto z = make_pair_measurement("2+17", 1, 0.0007, -0.0007);
  CHECK(z.v == 0.0);
  CHECK(z.s == 0.0);
}

TEST_CASE("inspection pairing over the synthetic blade") {
  auto fx = fixtures::make_blade_fixture();
  CHECK(fx.table.rows.size() == 16 * 30);
  auto report = compute_inspection_pairs(fx.table);
  CHECK(report.pairs.size() == 240);
  CHECK(report.unmatched.empty());
  for (const auto& p : report.pairs) {
    CHECK(p.v == p.delta_p + p.delta_s);
    CHECK(p.s == p.v / 2);
  }
}

TEST_CASE("inspection pairing reports unmatched points and rejects duplicates") {
  InspectionTable t = InspectionTable::parse_csv("part_id,point_id,deviation_in\n1,2,0.001\n1,17,0.002\n1,3,0.004\n");
  auto r = compute_inspection_pairs(t);
  CHECK(r.pairs.size() == 1);
  REQUIRE(r.unmatched.size() == 1);
  CHECK(r.unmatched[0].point_id == 3);
  CHECK(r.unmatched[0].line == 4);

  InspectionTable dup = InspectionTable::parse_csv("part_id,point_id,deviation_in\n1,2,0.001\n1,2,0.002\n1,17,0.0\n");
  try {
    compute_inspection_pairs(dup);
    FAIL("duplicate rows accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("pathing projection halves the combined field") {
  std::map<std::string, double> raw{{"2+17", 0.004}, {"3+18", 0.0}};
  std::vector<std::string> keys{"2+17", "3+18"};
  auto f = rb_compute_pathing_dev(raw, keys);
  CHECK(f.at("2+17").p == 0.002);
  CHECK(f.at("3+18").p == 0.0);
  std::vector<std::string> missing{"4+19"};
  CHECK_THROWS_WITH_AS(rb_compute_pathing_dev(raw, missing), doctest::Contains("4+19"), Error);

  auto fx = fixtures::make_blade_fixture();
  std::vector<std::string> all;
  for (const auto& [k, _] : fx.pathing_raw) all.push_back(k);
  auto full = rb_compute_pathing_dev(fx.pathing_raw, all);
  CHECK(full.size() == 15);
  for (const auto& [k, e] : full) CHECK(e.p == fx.pathing_raw.at(k) / 2);
}

TEST_CASE("drift fit on exact and constant series") {
  auto fit = rb_compute_wear_drift(series_of({0.001, 0.002, 0.003}));
  CHECK(fit.b == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(fit.c == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(fit.w_d == doctest::Approx(0.002).epsilon(1e-12));
  REQUIRE(fit.w_v);
  CHECK(*fit.w_v == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(rb_compute_residual_systematic(fit).c == doctest::Approx(0.001).epsilon(1e-12));

  auto flat = rb_compute_wear_drift(series_of({0.005, 0.005, 0.005, 0.005}));
  CHECK(std::abs(flat.b) < 1e-15);
  CHECK(flat.c == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(std::abs(flat.w_d) < 1e-15);
  CHECK(rb_compute_residual_systematic(flat).c == doctest::Approx(0.005).epsilon(1e-12));
}

TEST_CASE("drift fit sample-size edges") {
  CHECK_THROWS_AS(rb_compute_wear_drift(series_of({0.001})), Error);
  auto two = rb_compute_wear_drift(series_of({0.001, 0.003}));
  CHECK_FALSE(two.variability_available());
  CHECK_FALSE(rb_compute_process_variability(two).has_value());
}

TEST_CASE("process variability hand evaluation") {
  // Residuals (+e, -2e, +e) about an arbitrary line at n = 1..3.
  const double e = 0.0001, c = 0.002, b = 0.0003;
  auto fit = rb_compute_wear_drift(series_of({c + e, c + b - 2 * e, c + 2 * b + e}));
  REQUIRE(fit.w_v);
  CHECK(*fit.w_v == doctest::Approx(e * std::sqrt(6.0)).epsilon(1e-9));
}

TEST_CASE("drift fit matches the normal-equations oracle on random series") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    auto ps = random_series(rng, 3 + static_cast<int>(rng() % 14));
    auto fit = rb_compute_wear_drift(ps);
    auto u = ps.u();
    auto ref = oracle::normal_equations(ps.parts, u);
    CHECK(std::abs(fit.b - ref.b) < 1e-10);
    CHECK(std::abs(fit.c - ref.c) < 1e-10);
    CHECK(fit.w_d == fit.b * static_cast<double>(ps.size() - 1));
    double sum_eps = 0, sse = 0;
    for (double r : fit.residuals) {
      sum_eps += r;
      sse += r * r;
    }
    CHECK(std::abs(sum_eps) < 1e-12);
    REQUIRE(fit.w_v);
    CHECK(*fit.w_v >= 0.0);
    CHECK(std::abs(*fit.w_v - std::sqrt(sse / (ps.size() - 2.0))) < 1e-12);
    CHECK(rb_compute_residual_systematic(fit).c == fit.c);
  }
}

TEST_CASE("fit optimality under small perturbations") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto ps = random_series(rng, 3 + static_cast<int>(rng() % 14));
    auto fit = rb_compute_wear_drift(ps);
    auto u = ps.u();
    const double base = oracle::sse(ps.parts, u, fit.c, fit.b);
    for (double dc : {-1e-6, 0.0, 1e-6})
      for (double db : {-1e-6, 0.0, 1e-6}) CHECK(oracle::sse(ps.parts, u, fit.c + dc, fit.b + db) >= base);
  }
}

TEST_CASE("decomposition identity on the synthetic blade") {
  auto fx = fixtures::make_blade_fixture();
  auto report = compute_inspection_pairs(fx.table);
  std::vector<std::string> keys;
  for (const auto& [k, _] : fx.pathing_raw) keys.push_back(k);
  auto pathing = rb_compute_pathing_dev(fx.pathing_raw, keys);
  auto series = build_series(report.pairs, std::nullopt, &pathing);
  REQUIRE(series.size() == 15);
  for (const auto& ps : series) {
    auto fit = rb_compute_wear_drift(ps);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const double recon = *ps.pathing + fit.c + fit.b * (ps.parts[i] - 1) + fit.residuals[i];
      CHECK(std::abs(ps.s[i] - recon) < 1e-12);
    }
  }
}

TEST_CASE("attribution arithmetic") {
  DriftFit fit;
  fit.c = 0.001;
  fit.b = 0.002;
  fit.w_v = 0.0;
  auto a = rb_compute_attribution_fractions(0.001, fit, 2, 1e-9);
  CHECK(a.phi_p == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(a.phi_c == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(a.phi_d == doctest::Approx(0.50).epsilon(1e-6));

  DriftFit zero;
  zero.w_v = 0.0001;
  auto z = rb_compute_attribution_fractions(0.0, zero, 5, 1e-9);
  CHECK(z.phi_p == 0.0);
  CHECK(z.phi_c == 0.0);
  CHECK(z.phi_d == 0.0);
  CHECK(z.s_hat == 0.0);
  REQUIRE(z.psi_v);
  CHECK(std::isfinite(*z.psi_v));
  CHECK(*z.psi_v == doctest::Approx(0.0001 / 1e-9));

  DriftFit pred;
  pred.c = 0.0005;
  pred.b = 0.0001;
  CHECK(predict_surface_deviation(0.001, pred, 16) == doctest::Approx(0.003).epsilon(1e-12));
  CHECK(predict_surface_deviation(0.001, pred, 1) == doctest::Approx(0.0015).epsilon(1e-15));
}

TEST_CASE("attribution bounds over random tuples") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-0.01, 0.01);
  const double eps = 1e-9;
  for (int i = 0; i < 2000; ++i) {
    DriftFit fit;
    fit.c = d(rng);
    fit.b = d(rng) / 10;
    const int target = 1 + static_cast<int>(rng() % 30);
    auto a = rb_compute_attribution_fractions(d(rng), fit, target, eps);
    for (double phi : {a.phi_p, a.phi_c, a.phi_d}) {
      CHECK(phi >= 0.0);
      CHECK(phi < 1.0);
    }
    const double sum = a.phi_p + a.phi_c + a.phi_d;
    CHECK(sum < 1.0);
    CHECK(sum >= 1.0 - eps / (a.total + eps) - 1e-12);
  }
}

TEST_CASE("scale equivariance of the decomposition") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto ps = random_series(rng, 4 + static_cast<int>(rng() % 10));
    ps.pathing = 0.0004;
    for (double lambda : {0.1, 10.0}) {
      PairSeries scaled = ps;
      for (double& x : scaled.s) x *= lambda;
      *scaled.pathing *= lambda;
      auto f1 = rb_compute_wear_drift(ps), f2 = rb_compute_wear_drift(scaled);
      CHECK(f2.b == doctest::Approx(lambda * f1.b).epsilon(1e-9));
      CHECK(f2.c == doctest::Approx(lambda * f1.c).epsilon(1e-9));
      CHECK(*f2.w_v == doctest::Approx(lambda * *f1.w_v).epsilon(1e-9));
      auto a1 = rb_compute_attribution_fractions(*ps.pathing, f1, 20, 1e-9);
      auto a2 = rb_compute_attribution_fractions(*scaled.pathing, f2, 20, 1e-9 * lambda);
      CHECK(a2.phi_p == doctest::Approx(a1.phi_p).epsilon(1e-9));
      CHECK(a2.phi_d == doctest::Approx(a1.phi_d).epsilon(1e-9));
      CHECK(a2.s_hat == doctest::Approx(lambda * a1.s_hat).epsilon(1e-9));
    }
  }
}

TEST_CASE("compensation geometry") {
  auto z = rb_compute_pair_tool_comp(0.0);
  CHECK(z.t_r == 0.0);
  CHECK(z.t_l == 0.0);
  const double s25 = std::sin(25.0 * std::numbers::pi / 180.0);
  auto first = rb_compute_pair_tool_comp(0.001164 / s25);
  CHECK(first.t_r == doctest::Approx(0.001164).epsilon(1e-9));
  CHECK(std::abs(first.t_l - 0.002497) < 1e-6);
  auto last = rb_compute_pair_tool_comp(0.001620 / s25);
  CHECK(std::abs(last.t_r - 0.001620) < 1e-9);
  CHECK(std::abs(last.t_l - 0.003474) < 1e-6);
  CHECK(rb_compute_radius_offset(0.003) == doctest::Approx(0.003 * s25));
  CHECK(rb_compute_tool_length(0.003) == doctest::Approx(0.003 * std::cos(25.0 * std::numbers::pi / 180.0)));
  CHECK_THROWS_AS(rb_compute_pair_tool_comp(0.001, 0.0), Error);
  CHECK_THROWS_AS(rb_compute_pair_tool_comp(0.001, 90.0), Error);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-0.01, 0.01), th(1.0, 89.0);
  for (int i = 0; i < 500; ++i) {
    const double delta = d(rng), theta = th(rng);
    auto v = rb_compute_pair_tool_comp(delta, theta);
    const double rad = theta * std::numbers::pi / 180.0;
    CHECK(std::abs(v.t_r - delta * std::sin(rad)) < 1e-12);
    CHECK(std::abs(v.t_l - delta * std::cos(rad)) < 1e-12);
    if (delta != 0.0) CHECK(v.t_l / v.t_r == doctest::Approx(1.0 / std::tan(rad)).epsilon(1e-12));
  }
}

TEST_CASE("reference table ratio sits at cot 25 degrees") {
  const double cot = 1.0 / std::tan(25.0 * std::numbers::pi / 180.0);
  CHECK(fixtures::reference_rows().size() == 15);
  for (const auto& r : fixtures::reference_rows()) CHECK(std::abs(r.tlc / r.trc - cot) <= 0.002);
}

TEST_CASE("summary statistics") {
  std::vector<double> two{0.001, 0.003};
  CHECK(rb_compute_average(two) == doctest::Approx(0.002).epsilon(1e-15));
  std::vector<double> same{0.004, 0.004, 0.004};
  CHECK(rb_compute_std_dev(same) == 0.0);
  std::vector<double> none;
  CHECK_THROWS_AS(rb_compute_average(none), Error);
  std::vector<double> one{0.1};
  CHECK_THROWS_AS(rb_compute_std_dev(one), Error);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-0.01, 0.01);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(2 + rng() % 30);
    for (auto& x : v) x = d(rng);
    CHECK(std::abs(rb_compute_average(v) - oracle::mean_two_pass(v)) < 1e-14);
    CHECK(std::abs(rb_compute_std_dev(v) - oracle::sample_std_two_pass(v)) < 1e-14);
  }
}

TEST_CASE("level and position layout") {
  CHECK(rb_compute_level("2+17") == 1);
  CHECK(rb_compute_position_in_level("2+17") == 1);
  CHECK(rb_compute_level("16+31") == 5);
  CHECK(rb_compute_position_in_level("16+31") == 3);
  CHECK(rb_compute_level("6+21") == 2);
  CHECK(rb_compute_position_in_level("6+21") == 2);
  CHECK_THROWS_AS(rb_compute_level("2+18"), Error);
}

TEST_CASE("inspection slices") {
  auto fx = fixtures::make_blade_fixture();
  auto pairs = compute_inspection_pairs(fx.table).pairs;
  SliceSelector window;
  window.parts = PartRange{4, 16};
  CHECK(fetch_inspection_slices(pairs, window).rows.size() == 15 * 13);
  SliceSelector one;
  one.pair_keys = {"9+24"};
  CHECK(fetch_inspection_slices(pairs, one).rows.size() == 16);
  SliceSelector none;
  none.parts = PartRange{40, 50};
  auto empty = fetch_inspection_slices(pairs, none);
  CHECK(empty.rows.empty());
  CHECK(empty.warning.has_value());
  CHECK(fetch_inspection_slices(pairs, window).cache_key == fetch_inspection_slices(pairs, window).cache_key);
}

TEST_CASE("delta selection strategies") {
  auto ps = series_of({0.001, 0.002, 0.003, 0.004});
  auto fit = rb_compute_wear_drift(ps);
  DeltaSelection mean;
  CHECK(select_delta(mean, ps, &fit) == doctest::Approx(0.0025));
  DeltaSelection drift{DeltaStrategy::drift_at_target, 6, 0.010};
  CHECK(select_delta(drift, ps, &fit) == doctest::Approx(fit.b * 5));
  DeltaSelection bounded{DeltaStrategy::bounded_residual, 1, 0.0005};
  CHECK(std::abs(select_delta(bounded, ps, &fit)) <= 0.0005 + 1e-15);
  CHECK(parse_delta_strategy(to_string(DeltaStrategy::bounded_residual)) == DeltaStrategy::bounded_residual);
}

TEST_CASE("compensation report round trip") {
  auto rows = fixtures::reference_rows();
  auto back = parse_compensation_report_csv(compensation_report_csv(rows));
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].pair_key == rows[i].pair_key);
    CHECK(back[i].trc == rows[i].trc);
    CHECK(back[i].tlc == rows[i].tlc);
  }
}
