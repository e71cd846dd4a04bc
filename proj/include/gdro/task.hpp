#pragma once

// Compass task: eight 2-D Gaussian modes on the unit circle, one per
// condition, with a fraction of each condition's data drawn from the wrong
// mode. Rewards measure how well a sample points at its condition's mode.

#include "gdro/numkit.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gdro {

struct CompassTask {
    int num_conditions = 8;
    double mode_std = 0.15;
    double correct_mode_prob = 0.6;

    /// Unit vector at angle c*pi/4 (generally 2*pi*c/num_conditions).
    Vector center(int condition) const;
    void validate() const;
};

struct Example {
    Vector x0;
    int condition = 0;
};

/// Deterministic given seed; rejects n == 0.
std::vector<Example> generate_dataset(const CompassTask& task, std::size_t n, std::uint64_t seed);

/// max(0, cos angle(x, mu_c)); zero at the origin.
double sector_reward(const Vector& x, int condition, const CompassTask& task = {});
/// Sector reward times (1 - exp(-|x|)). Grows without bound in |x| off the
/// data manifold, which the quality proxy penalizes.
double hackable_reward(const Vector& x, int condition, const CompassTask& task = {});

enum class RewardKind { Sector, Hackable };

RewardKind parse_reward_name(std::string_view name);
std::string reward_name(RewardKind kind);
double reward(RewardKind kind, const Vector& x, int condition, const CompassTask& task = {});

/// Quality proxy in (3, 4]: 3 + exp(-d^2 / (2 sigma^2)), d the distance to the
/// nearest mode center.
double quality_score(const Vector& x, const CompassTask& task = {});

enum class ScoreKind { OcrLike, GenevalLike };

ScoreKind parse_score_kind(std::string_view name);

/// r * (u_hat - 3) + 0.2.
/// OcrLike averages every facet into u_hat. GenevalLike averages only
/// coherence and style: facets are either (coherence, style) or
/// (alignment, coherence, style), and alignment is ignored.
double corrected_score(double reward, std::span<const double> facets, ScoreKind kind);

}  // namespace gdro
