#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "rpf/analytic_model.hpp"
#include "rpf/pf_optimizer.hpp"
#include "test_support.hpp"

using namespace rpf;
using rpf::test::enumerate_slots;
using rpf::test::random_scenario;

TEST(CollisionProb, Examples) {
  EXPECT_EQ(collision_prob(0, std::vector<double>{0.7}), 0.0);
  EXPECT_DOUBLE_EQ(collision_prob(0, std::vector<double>{0.5, 0.5}), 0.5);
  EXPECT_NEAR(collision_prob(0, std::vector<double>{0.1, 0.2, 0.3}), 0.44, 1e-15);
}

TEST(SuccessProb, Examples) {
  EXPECT_DOUBLE_EQ(success_prob(0, std::vector<double>{0.5}, std::vector<double>{0.0}), 0.5);
  const std::vector<double> tau{0.5, 0.5};
  EXPECT_DOUBLE_EQ(success_prob(0, tau, std::vector<double>{0.0, 0.0}), 0.25);
  EXPECT_DOUBLE_EQ(success_prob(1, tau, std::vector<double>{0.0, 0.0}), 0.25);
  const std::vector<double> pn{0.2, 0.0};
  EXPECT_NEAR(success_prob(0, tau, pn), 0.2, 1e-15);
  EXPECT_DOUBLE_EQ(success_prob(1, tau, pn), 0.25);
}

TEST(HighestIndexFailureProb, Examples) {
  EXPECT_EQ(highest_index_failure_prob(0, std::vector<double>{0.5}, std::vector<double>{0.0},
                                       std::vector<double>{100.0}),
            0.0);
  const std::vector<double> tau{0.5, 0.5}, pn{0.0, 0.0}, ts{100.0, 200.0};
  EXPECT_EQ(highest_index_failure_prob(0, tau, pn, ts), 0.0);
  EXPECT_DOUBLE_EQ(highest_index_failure_prob(1, tau, pn, ts), 0.25);
}

TEST(HighestIndexFailureProb, SumsToFailureProbability) {
  const std::vector<double> tau{0.1, 0.35, 0.2}, pn{0.05, 0.2, 0.1}, ts{100, 300, 900};
  double sum = 0.0, pe = 1.0, ps = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    sum += highest_index_failure_prob(i, tau, pn, ts);
    ps += success_prob(i, tau, pn);
    pe *= 1.0 - tau[i];
  }
  EXPECT_NEAR(sum, 1.0 - pe - ps, 1e-15);
}

TEST(HighestIndexFailureProb, UnsortedIsContractViolation) {
  const std::vector<double> tau{0.5, 0.5}, pn{0.0, 0.0}, ts{200.0, 100.0};
  EXPECT_THROW(highest_index_failure_prob(0, tau, pn, ts), ContractViolation);
}

TEST(SlotDistribution, AllIdle) {
  const auto specs = test::ladder8();
  const auto m = SlotModel::from_specs(specs, ieee80211a_profile());
  const auto d = slot_distribution(m, std::vector<double>(8, 0.0), std::vector<double>(8, 0.0));
  EXPECT_EQ(d.p_empty, 1.0);
  EXPECT_EQ(d.t_slot_us, m.empty_slot_us);
}

TEST(SlotDistribution, LoneSaturatedStation) {
  const auto specs = test::ladder8();
  const std::vector<StationSpec> one{specs[0]};
  const auto m = SlotModel::from_specs(one, ieee80211a_profile());
  const auto d = slot_distribution(m, std::vector<double>{1.0}, std::vector<double>{0.0});
  EXPECT_EQ(d.p_success, 1.0);
  EXPECT_DOUBLE_EQ(d.t_slot_us, m.success_us[0]);
}

TEST(SlotDistribution, MatchesEnumerationOnRandomScenarios) {
  std::mt19937_64 rng(42);
  for (int k = 0; k < 40; ++k) {
    auto sc = random_scenario(rng, 1, 8, 0.01, 0.9);
    auto profile = ieee80211a_profile();
    profile.approximate_tu_as_ts = (k % 2 == 0);
    const auto m = SlotModel::from_specs(sc.specs, profile);
    const auto pn = detail::link_errors(sc.specs);
    std::vector<double> ps(sc.specs.size()), pu(sc.specs.size());
    const auto d = slot_distribution(m, sc.tau, pn, ps, pu);
    const auto e = enumerate_slots(sc.specs, profile, sc.tau);
    EXPECT_NEAR(d.p_empty, e.p_empty.value, 1e-13);
    EXPECT_NEAR(d.p_success, e.p_success.value, 1e-13);
    EXPECT_NEAR(d.p_failure, e.p_failure.value, 1e-13);
    EXPECT_NEAR(d.p_empty + d.p_success + d.p_failure, 1.0, 1e-12);
    EXPECT_NEAR(d.t_slot_us, e.mean_slot_us, 1e-9 * e.mean_slot_us);
    EXPECT_NEAR(d.t_slot_us,
                d.p_empty * m.empty_slot_us + d.p_success * d.t_success_us +
                    d.p_failure * d.t_failure_us,
                1e-9 * d.t_slot_us);
    double pu_sum = 0.0;
    for (std::size_t i = 0; i < sc.specs.size(); ++i) {
      EXPECT_NEAR(ps[i], e.p_success_station[i], 1e-13);
      EXPECT_NEAR(pu[i], e.p_failure_highest[i], 1e-13);
      pu_sum += pu[i];
    }
    EXPECT_NEAR(pu_sum, d.p_failure, 1e-12);

    const auto s = throughput(m, sc.tau, pn, detail::payloads(sc.specs));
    for (std::size_t i = 0; i < sc.specs.size(); ++i)
      EXPECT_NEAR(s[i], e.throughput[i].value, 1e-9 * e.throughput[i].value + 1e-15);
    if (profile.approximate_tu_as_ts) {
      const auto t = airtime(m, sc.tau);
      for (std::size_t i = 0; i < sc.specs.size(); ++i)
        EXPECT_NEAR(t[i], e.airtime[i].value, 1e-12);
    }
  }
}

TEST(PerStationMetrics, FailureConditionalIdentity) {
  std::mt19937_64 rng(3);
  const auto sc = random_scenario(rng, 4, 4);
  const auto ev = evaluate(sc.tau, sc.specs, ieee80211a_profile());
  for (std::size_t i = 0; i < sc.specs.size(); ++i) {
    const auto& st = ev.stations[i];
    EXPECT_NEAR(st.p_failure_cond,
                1.0 - (1.0 - sc.specs[i].link_error) * (1.0 - st.p_collision), 1e-15);
    EXPECT_GE(st.airtime, 0.0);
    EXPECT_LE(st.airtime, 1.0);
  }
}

TEST(TransformedVariables, BigXTimesIdleEqualsSlotTime) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    auto sc = random_scenario(rng, 1, 10, 0.001, 0.999);
    const auto m = SlotModel::from_specs(sc.specs, ieee80211a_profile());
    AttemptVector a{sc.tau};
    double idle = 1.0;
    for (double t : sc.tau) idle *= 1.0 - t;
    const auto d = slot_distribution(m, sc.tau, detail::link_errors(sc.specs));
    EXPECT_NEAR(big_x(m, a.x()) * idle, d.t_slot_us, 1e-9 * d.t_slot_us);
    EXPECT_NEAR(slot_time_success_form(m, sc.tau), d.t_slot_us, 1e-9 * d.t_slot_us);
    const auto v = solver_view(sc.tau, sc.specs, ieee80211a_profile());
    EXPECT_NEAR(v.big_x_us * idle, d.t_slot_us, 1e-9 * d.t_slot_us);
  }
}

TEST(TransformedVariables, XConsistentWithTau) {
  AttemptVector a{{0.1, 0.5, 0.9}};
  const auto x = a.x();
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(x[i], a.tau[i] / (1.0 - a.tau[i]), 1e-12 * x[i]);
  const auto back = AttemptVector::from_x(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(back.tau[i], a.tau[i], 1e-15);
  EXPECT_TRUE(std::isinf(AttemptVector{{1.0}}.x()[0]));
  EXPECT_TRUE(std::isfinite(AttemptVector{{1.0, 0.5}}.x()[0]));
}

TEST(Throughput, XFormAgrees) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 30; ++k) {
    auto sc = random_scenario(rng);
    const auto m = SlotModel::from_specs(sc.specs, ieee80211a_profile());
    const auto pn = detail::link_errors(sc.specs);
    const auto len = detail::payloads(sc.specs);
    const auto a = throughput(m, sc.tau, pn, len);
    const auto b = throughput_x_form(m, AttemptVector{sc.tau}.x(), pn, len);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9 * a[i]);
  }
}

TEST(Throughput, LoneSaturatedStation) {
  const auto p = ieee80211a_profile();
  std::vector<StationSpec> s{test::ladder8()[0]};
  const auto out = throughput(std::vector<double>{1.0}, s, p);
  EXPECT_NEAR(out[0], s[0].payload_bits / tx_duration_success(p, s[0]), 1e-12);
  const auto xf = throughput_x_form(SlotModel::from_specs(s, p),
                                    AttemptVector{{1.0}}.x(), std::vector<double>{0.0},
                                    std::vector<double>{s[0].payload_bits});
  EXPECT_NEAR(xf[0], out[0], 1e-12);
}

TEST(Throughput, AllIdleIsZero) {
  const auto out = throughput(std::vector<double>(8, 0.0), test::ladder8(), ieee80211a_profile());
  for (double s : out) EXPECT_EQ(s, 0.0);
}

TEST(Throughput, EqualAttemptsEqualThroughputAcrossRates) {
  const auto specs = test::two_station(54.0);
  const auto s = throughput(std::vector<double>{0.06, 0.06}, specs, ieee80211a_profile());
  EXPECT_NEAR(s[0], s[1], 1e-9 * s[0]);
}

TEST(Throughput, LadderUnderDcfIsNearlyEqual) {
  const auto specs = test::ladder8();
  const auto p = ieee80211a_profile();
  const auto tau = dcf_attempt_prob(16.0, 6, specs, p);
  const auto s = throughput(tau.tau, specs, p);
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  EXPECT_LE((*hi - *lo) / *hi, 0.01);
}

TEST(Airtime, LoneSaturatedStationOwnsChannel) {
  std::vector<StationSpec> s{test::ladder8()[3]};
  EXPECT_DOUBLE_EQ(airtime(std::vector<double>{1.0}, s, ieee80211a_profile())[0], 1.0);
  EXPECT_DOUBLE_EQ(airtime_x_form(SlotModel::from_specs(s, ieee80211a_profile()),
                                  AttemptVector{{1.0}}.x())[0],
                   1.0);
}

TEST(Airtime, SymmetricStations) {
  const auto specs = test::two_station(24.0, 24.0);
  const auto t = airtime(std::vector<double>{0.2, 0.2}, specs, ieee80211a_profile());
  EXPECT_DOUBLE_EQ(t[0], t[1]);
}

TEST(Airtime, XFormAgreesAndIgnoresCallerOrder) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 30; ++k) {
    auto sc = random_scenario(rng, 2, 8, 0.001, 0.95);
    const auto p = ieee80211a_profile();
    const auto m = SlotModel::from_specs(sc.specs, p);
    const auto a = airtime(m, sc.tau);
    const auto b = airtime_x_form(m, AttemptVector{sc.tau}.x());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-9 * a[i]);
      sum += a[i];
    }
    EXPECT_LE(sum, static_cast<double>(a.size()));
    std::vector<StationSpec> rev(sc.specs.rbegin(), sc.specs.rend());
    std::vector<double> rtau(sc.tau.rbegin(), sc.tau.rend());
    const auto r = airtime(rtau, rev, p);
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_NEAR(r[a.size() - 1 - i], a[i], 1e-12);
  }
}

TEST(Airtime, BitIdenticalUnderLinkErrorChanges) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> pn(0.0, 0.95);
  for (int k = 0; k < 50; ++k) {
    auto sc = random_scenario(rng);
    const auto base = airtime(sc.tau, sc.specs, ieee80211a_profile());
    for (auto& s : sc.specs) s.link_error = pn(rng);
    const auto moved = airtime(sc.tau, sc.specs, ieee80211a_profile());
    ASSERT_EQ(base.size(), moved.size());
    EXPECT_EQ(std::memcmp(base.data(), moved.data(), base.size() * sizeof(double)), 0);
  }
}

TEST(Utility, ZeroThroughputIsFlaggedMinusInfinity) {
  const auto u = utility(std::vector<double>{1.0, 0.0});
  EXPECT_FALSE(u.finite);
  EXPECT_TRUE(std::isinf(u.value) && u.value < 0);
}

TEST(Utility, ScalingAddsNLogC) {
  const std::vector<double> s{1.5, 2.0, 7.0};
  std::vector<double> scaled;
  for (double v : s) scaled.push_back(3.0 * v);
  EXPECT_NEAR(utility(scaled).value - utility(s).value, 3.0 * std::log(3.0), 1e-12);
}

TEST(JainIndex, Examples) {
  EXPECT_DOUBLE_EQ(jain_index(std::vector<double>{2.0, 2.0, 2.0}), 1.0);
  EXPECT_DOUBLE_EQ(jain_index(std::vector<double>{0.0, 0.0, 5.0, 0.0}), 0.25);
  EXPECT_THROW(jain_index(std::vector<double>{}), ValidationError);
}

TEST(Jacobian, MatchesCentralDifferencesAndIsSymmetric) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> lx(-6.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    auto sc = random_scenario(rng, 2, 8);
    const auto m = SlotModel::from_specs(sc.specs, ieee80211a_profile());
    const std::size_t n = sc.specs.size();
    std::vector<double> l(n);
    for (auto& v : l) v = lx(rng);
    auto x_of = [](std::vector<double> v) {
      for (auto& e : v) e = std::exp(e);
      return v;
    };
    const auto jac = airtime_jacobian_log_x(m, x_of(l));
    const double h = 1e-5;
    for (std::size_t c = 0; c < n; ++c) {
      auto up = l, dn = l;
      up[c] += h;
      dn[c] -= h;
      const auto tu = airtime_x_form(m, x_of(up));
      const auto td = airtime_x_form(m, x_of(dn));
      for (std::size_t r = 0; r < n; ++r)
        EXPECT_NEAR(jac(r, c), (tu[r] - td[r]) / (2 * h), 1e-8);
    }
    EXPECT_LE((jac - jac.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Convexity, SingleStation) {
  std::mt19937_64 rng(1);
  std::vector<StationSpec> s{test::ladder8()[0]};
  const auto r = convexity_probe(s, ieee80211a_profile(), rng, 2000);
  EXPECT_LE(r.worst_log_x_violation, 1e-12);
  EXPECT_LE(r.worst_neg_utility_violation, 1e-9);
}

TEST(Convexity, EqualDurations) {
  std::mt19937_64 rng(2);
  const std::vector<StationSpec> s(5, test::ladder8()[2]);
  const auto r = convexity_probe(s, ieee80211a_profile(), rng, 2000);
  EXPECT_LE(r.worst_log_x_violation, 1e-9);
}

TEST(Convexity, Ladder) {
  std::mt19937_64 rng(3);
  const auto r = convexity_probe(test::ladder8(), ieee80211a_profile(), rng, 10000);
  EXPECT_EQ(r.segments, 10000u);
  EXPECT_LE(r.worst_log_x_violation, 1e-9);
  EXPECT_LE(r.worst_neg_utility_violation, 1e-9);
}

TEST(Evaluate, SizeMismatchIsValidationError) {
  EXPECT_THROW(airtime(std::vector<double>{0.1}, test::ladder8(), ieee80211a_profile()),
               ValidationError);
  EXPECT_THROW(airtime(std::vector<double>(8, 1.5), test::ladder8(), ieee80211a_profile()),
               ValidationError);
}
