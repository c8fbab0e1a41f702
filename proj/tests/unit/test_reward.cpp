#include <doctest.h>

#include <cmath>
#include <numbers>

#include "metaprune/reward.hpp"
#include "metaprune/rng.hpp"

using metaprune::Rng;
using namespace metaprune::reward;

TEST_CASE("alpha identities") {
    const RewardParams p{0.766, 4110e6};
    CHECK(alpha(0.0, p) == doctest::Approx(1.0));
    CHECK(alpha(p.baseline_accuracy / 2, p) == doctest::Approx(4.0));
    CHECK_THROWS_AS(alpha(p.baseline_accuracy, p), DomainError);
    CHECK_THROWS_AS(alpha(0.9, p), DomainError);
    CHECK_THROWS_AS(alpha(-0.1, p), DomainError);
}

TEST_CASE("psi identities") {
    const RewardParams p{0.766, 4110e6};
    CHECK(psi(p.baseline_flops / std::numbers::e, p) == doctest::Approx(1.0));
    CHECK_THROWS_AS(psi(p.baseline_flops, p), DomainError);
    CHECK_THROWS_AS(psi(p.baseline_flops * 1.5, p), DomainError);
    CHECK_THROWS_AS(psi(0.0, p), DomainError);
    CHECK(psi(p.baseline_flops / 10, p, 10.0) == doctest::Approx(1.0));
}

TEST_CASE("worked point from published ResNet-50 rows") {
    const RewardParams p{0.766, 4110e6};
    const double a = 0.7576;
    const double f = 1950e6;
    const auto v = reward(a, f, p);
    // oracle: plain arithmetic
    const double oa = std::pow(0.766 / (0.766 - 0.7576), 2);
    const double op = std::log(4110.0 / 1950.0);
    CHECK(v.alpha == doctest::Approx(oa).epsilon(1e-12));
    CHECK(v.psi == doctest::Approx(op).epsilon(1e-12));
    CHECK(v.reward == doctest::Approx(oa * op).epsilon(1e-12));
    CHECK(std::abs(v.alpha - 8316) / 8316 < 1e-3);
    CHECK(std::abs(v.psi - 0.7457) / 0.7457 < 1e-3);
    CHECK(std::abs(v.reward - 6202) / 6202 < 1e-3);
}

TEST_CASE("reward is strictly monotone in both arguments") {
    Rng rng(11);
    const RewardParams p{0.8, 1e9};
    for (int i = 0; i < 10000; ++i) {
        const double a1 = rng.uniform(0.0, 0.8);
        const double a2 = rng.uniform(0.0, 0.8);
        const double f1 = rng.uniform(1e6, 1e9);
        const double f2 = rng.uniform(1e6, 1e9);
        if (a1 == a2 || f1 == f2) continue;
        // better accuracy, same flops
        CHECK((reward(std::max(a1, a2), f1, p).reward > reward(std::min(a1, a2), f1, p).reward));
        // fewer flops, same accuracy
        CHECK((reward(a1, std::min(f1, f2), p).reward > reward(a1, std::max(f1, f2), p).reward));
    }
}

TEST_CASE("ranking is invariant to the logarithm base") {
    Rng rng(5);
    const RewardParams p{0.9, 5e8};
    const AccuracyFlopsReward natural(p);
    const AccuracyFlopsReward base2(p, 2.0);
    const AccuracyFlopsReward base10(p, 10.0);
    for (int i = 0; i < 2000; ++i) {
        const double a1 = rng.uniform(0.0, 0.89), a2 = rng.uniform(0.0, 0.89);
        const double f1 = rng.uniform(1e6, 4.9e8), f2 = rng.uniform(1e6, 4.9e8);
        const bool e = natural.evaluate(a1, f1).reward > natural.evaluate(a2, f2).reward;
        CHECK(e == (base2.evaluate(a1, f1).reward > base2.evaluate(a2, f2).reward));
        CHECK(e == (base10.evaluate(a1, f1).reward > base10.evaluate(a2, f2).reward));
    }
}

TEST_CASE("parameter validation") {
    CHECK_THROWS_AS(RewardParams({0.0, 1e6}).validate(), DomainError);
    CHECK_THROWS_AS(RewardParams({1.0, 1e6}).validate(), DomainError);
    CHECK_THROWS_AS(RewardParams({0.5, 0.0}).validate(), DomainError);
    CHECK_NOTHROW(RewardParams({0.5, 1.0}).validate());
}

TEST_CASE("parameter ratio and percent conversion") {
    CHECK(param_ratio(25.5e6, 25.5e6) == doctest::Approx(100.0));
    CHECK(param_ratio(5.1e6, 25.5e6) == doctest::Approx(20.0));
    CHECK(accuracy_from_percent(76.6) == doctest::Approx(0.766));
}

TEST_CASE("reward surface") {
    const RewardParams p{0.766, 4110e6};
    SUBCASE("1x1 grid equals reward()") {
        const auto s = reward_surface(p, {0.7576}, {1950e6});
        REQUIRE(s.cells.size() == 1);
        REQUIRE(s.cells[0][0].value.has_value());
        CHECK(s.cells[0][0].value->reward == reward(0.7576, 1950e6, p).reward);
    }
    SUBCASE("out of domain cells are flagged") {
        const auto s = reward_surface(p, {0.5, 0.8}, {1e9, 4110e6});
        CHECK(s.cells[0][0].value.has_value());
        CHECK_FALSE(s.cells[0][1].value.has_value());
        CHECK_FALSE(s.cells[1][0].value.has_value());
        const auto csv = surface_csv(s);
        CHECK(csv.rfind("accuracy\\flops,", 0) == 0);
        CHECK(csv.find("nan") != std::string::npos);
    }
    SUBCASE("linspace") {
        const auto v = linspace(0.0, 1.0, 5);
        REQUIRE(v.size() == 5);
        CHECK(v.front() == 0.0);
        CHECK(v.back() == 1.0);
        CHECK(v[2] == doctest::Approx(0.5));
        CHECK(linspace(2.0, 3.0, 1) == std::vector<double>{2.0});
    }
}
