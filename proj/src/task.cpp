#include "gdro/task.hpp"

#include "gdro/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace gdro {

Vector CompassTask::center(int condition) const {
    if (condition < 0 || condition >= num_conditions) {
        throw std::out_of_range("condition " + std::to_string(condition) + " outside [0, " +
                                std::to_string(num_conditions) + ")");
    }
    const double angle = 2.0 * std::numbers::pi * condition / num_conditions;
    Vector mu(2);
    mu << std::cos(angle), std::sin(angle);
    return mu;
}

void CompassTask::validate() const {
    if (num_conditions < 2) throw std::invalid_argument("num_conditions must be at least 2");
    if (!(mode_std > 0.0)) throw std::invalid_argument("mode_std must be positive");
    if (!(correct_mode_prob >= 0.0 && correct_mode_prob <= 1.0))
        throw std::invalid_argument("correct_mode_prob must lie in [0, 1]");
}

std::vector<Example> generate_dataset(const CompassTask& task, std::size_t n, std::uint64_t seed) {
    task.validate();
    if (n == 0) throw std::invalid_argument("generate_dataset: n must be at least 1");
    std::vector<Example> data;
    data.reserve(n);
    const auto nc = static_cast<std::uint64_t>(task.num_conditions);
    for (std::size_t i = 0; i < n; ++i) {
        KeyedRng rng({seed, 0xDA7Aull, i});
        const int c = static_cast<int>(rng.below(nc));
        int mode = c;
        if (rng.uniform() >= task.correct_mode_prob) {
            // Uniform over the other num_conditions - 1 modes.
            mode = static_cast<int>((c + 1 + rng.below(nc - 1)) % nc);
        }
        Vector x = task.center(mode);
        x(0) += task.mode_std * rng.normal();
        x(1) += task.mode_std * rng.normal();
        data.push_back({std::move(x), c});
    }
    return data;
}

double sector_reward(const Vector& x, int condition, const CompassTask& task) {
    const double norm = x.norm();
    if (norm == 0.0) return 0.0;
    const double cosine = x.dot(task.center(condition)) / norm;
    return std::max(0.0, std::min(1.0, cosine));
}

double hackable_reward(const Vector& x, int condition, const CompassTask& task) {
    return sector_reward(x, condition, task) * -std::expm1(-x.norm());
}

RewardKind parse_reward_name(std::string_view name) {
    if (name == "sector") return RewardKind::Sector;
    if (name == "hackable") return RewardKind::Hackable;
    throw std::invalid_argument("unknown reward '" + std::string(name) + "' (expected sector|hackable)");
}

std::string reward_name(RewardKind kind) {
    return kind == RewardKind::Sector ? "sector" : "hackable";
}

double reward(RewardKind kind, const Vector& x, int condition, const CompassTask& task) {
    return kind == RewardKind::Sector ? sector_reward(x, condition, task)
                                      : hackable_reward(x, condition, task);
}

double quality_score(const Vector& x, const CompassTask& task) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < task.num_conditions; ++c) best = std::min(best, (x - task.center(c)).squaredNorm());
    return 3.0 + std::exp(-best / (2.0 * task.mode_std * task.mode_std));
}

ScoreKind parse_score_kind(std::string_view name) {
    if (name == "ocr" || name == "ocr-like") return ScoreKind::OcrLike;
    if (name == "geneval" || name == "geneval-like") return ScoreKind::GenevalLike;
    throw std::invalid_argument("unknown score kind '" + std::string(name) + "'");
}

double corrected_score(double reward, std::span<const double> facets, ScoreKind kind) {
    if (facets.empty()) throw std::invalid_argument("corrected_score: empty facet list");
    double u_hat = 0.0;
    if (kind == ScoreKind::OcrLike) {
        for (double f : facets) u_hat += f;
        u_hat /= static_cast<double>(facets.size());
    } else {
        if (facets.size() != 2 && facets.size() != 3) {
            throw std::invalid_argument(
                "corrected_score: geneval-like expects (coherence, style) or (alignment, coherence, style)");
        }
        const auto tail = facets.last(2);
        u_hat = 0.5 * (tail[0] + tail[1]);
    }
    return reward * (u_hat - 3.0) + 0.2;
}

}  // namespace gdro
