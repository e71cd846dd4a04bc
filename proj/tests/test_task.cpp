#include "gdro/task.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

using namespace gdro;

namespace {

Vector v2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

int nearest_center(const Vector& x, const CompassTask& task) {
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < task.num_conditions; ++c) {
        const double d = (x - task.center(c)).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("centers are unit vectors at c*pi/4") {
    const CompassTask task;
    for (int c = 0; c < 8; ++c) {
        const Vector mu = task.center(c);
        CHECK(mu.norm() == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(mu(0) == doctest::Approx(std::cos(c * std::numbers::pi / 4)));
        CHECK(mu(1) == doctest::Approx(std::sin(c * std::numbers::pi / 4)));
    }
    CHECK_THROWS(task.center(8));
}

TEST_CASE("generate_dataset: guards and determinism") {
    const CompassTask task;
    CHECK_THROWS_AS(generate_dataset(task, 0, 1), std::invalid_argument);
    const auto a = generate_dataset(task, 500, 3);
    const auto b = generate_dataset(task, 500, 3);
    REQUIRE(a.size() == 500);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x0 == b[i].x0);
        CHECK(a[i].condition == b[i].condition);
    }
    const auto c = generate_dataset(task, 500, 4);
    CHECK(c[0].x0 != a[0].x0);
}

TEST_CASE("generate_dataset: correct-mode fraction per condition at n = 1e5") {
    const CompassTask task;
    const auto data = generate_dataset(task, 100000, 0);
    std::vector<double> hits(8, 0.0), totals(8, 0.0);
    for (const auto& ex : data) {
        totals[static_cast<std::size_t>(ex.condition)] += 1;
        if (nearest_center(ex.x0, task) == ex.condition) hits[static_cast<std::size_t>(ex.condition)] += 1;
    }
    for (int c = 0; c < 8; ++c) {
        CAPTURE(c);
        CHECK(totals[static_cast<std::size_t>(c)] > 0);
        CHECK(std::abs(hits[static_cast<std::size_t>(c)] / totals[static_cast<std::size_t>(c)] - 0.6) <= 0.02);
    }
}

TEST_CASE("sector_reward examples and scale invariance") {
    const CompassTask task;
    CHECK(sector_reward(task.center(0), 0) == doctest::Approx(1.0));
    CHECK(sector_reward(v2(0, 1), 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(sector_reward(v2(1, 1) / std::sqrt(2.0), 0) == doctest::Approx(std::cos(std::numbers::pi / 4)));
    CHECK(sector_reward(v2(-1, 0), 0) == 0.0);
    CHECK(sector_reward(v2(0, 0), 3) == 0.0);
    const Vector x = v2(0.4, 0.9);
    for (double lambda : {0.01, 0.5, 2.0, 1e3}) CHECK(sector_reward(lambda * x, 1) == doctest::Approx(sector_reward(x, 1)));
}

TEST_CASE("hackable_reward examples and radial monotonicity") {
    const CompassTask task;
    CHECK(hackable_reward(task.center(0), 0) == doctest::Approx(1.0 - std::exp(-1.0)));
    CHECK(hackable_reward(10.0 * task.center(0), 0) == doctest::Approx(1.0 - std::exp(-10.0)));
    CHECK(hackable_reward(v2(0, 0), 0) == 0.0);
    const Vector dir = v2(0.9, 0.3).normalized();
    double prev = hackable_reward(0.05 * dir, 0);
    for (double r = 0.1; r < 30.0; r *= 1.3) {
        const double cur = hackable_reward(r * dir, 0);
        CHECK(cur > prev);
        prev = cur;
    }
    CHECK(quality_score(10.0 * task.center(0)) < quality_score(task.center(0)));
}

TEST_CASE("quality_score examples and shape") {
    const CompassTask task;
    CHECK(quality_score(task.center(3)) == doctest::Approx(4.0));
    CHECK(quality_score(task.center(0) + v2(0.15, 0)) == doctest::Approx(3.0 + std::exp(-0.5)).epsilon(1e-12));
    CHECK(quality_score(v2(1e4, 0)) == doctest::Approx(3.0));
    // decreasing in distance from a center
    double prev = 4.0;
    for (double d = 0.01; d < 0.35; d += 0.01) {
        const double q = quality_score(task.center(2) * (1.0 + d));
        CHECK(q < prev);
        CHECK(q > 3.0);
        prev = q;
    }
}

TEST_CASE("corrected_score reproduces the published baselines") {
    const double ocr[] = {3.2572, 3.7617, 3.2577};
    CHECK(std::abs(corrected_score(0.5843, ocr, ScoreKind::OcrLike) - 0.4486) < 0.001);
    const double geneval[] = {3.6191, 3.2376};
    CHECK(std::abs(corrected_score(0.6178, geneval, ScoreKind::GenevalLike) - 0.4646) < 0.001);
    const double geneval3[] = {9.9, 3.6191, 3.2376};
    CHECK(corrected_score(0.6178, geneval3, ScoreKind::GenevalLike) == corrected_score(0.6178, geneval, ScoreKind::GenevalLike));
    CHECK(corrected_score(0.0, ocr, ScoreKind::OcrLike) == 0.2);
    CHECK(corrected_score(0.0, geneval, ScoreKind::GenevalLike) == 0.2);
    CHECK_THROWS_AS(corrected_score(0.5, std::span<const double>{}, ScoreKind::OcrLike), std::invalid_argument);
}

TEST_CASE("reward and score names") {
    CHECK(parse_reward_name("sector") == RewardKind::Sector);
    CHECK(parse_reward_name("hackable") == RewardKind::Hackable);
    CHECK(reward_name(RewardKind::Hackable) == "hackable");
    CHECK_THROWS(parse_reward_name("ocr"));
    CHECK(parse_score_kind("ocr-like") == ScoreKind::OcrLike);
    CHECK(parse_score_kind("geneval") == ScoreKind::GenevalLike);
}
