#pragma once

// Group-level losses over implicit rewards.
//
// Implicit reward of a group member, for one shared timestep t and per-member
// noise eps_i fed identically to policy and reference:
//   s_i = -beta * (|v_i - v_theta(C_i)|^2 - |v_i - v_ref(C_i)|^2)
//
// Members are always in descending explicit-reward order. Index arguments
// are 0-based here; position 0 is the top-1 member.

#include "gdro/flow.hpp"
#include "gdro/numkit.hpp"
#include "gdro/rollout.hpp"

#include <span>
#include <vector>

namespace gdro {

struct ImplicitScoreVector {
    std::vector<double> s;
    double t = 0.0;
    double beta = 0.0;
};

struct TargetDistribution {
    std::vector<double> q;  // over members start..k-1
    double tau = 0.0;
    std::size_t start = 0;
};

/// Scalar loss and its gradient with respect to the scores.
struct ScoreLoss {
    double value = 0.0;
    std::vector<double> grad;
};

struct LossBreakdown {
    double l_gdro = 0.0;
    double l_reg = 0.0;
    double l_final = 0.0;
    double gamma = 0.0;
};

/// Shared timestep and per-member noise for one group in one training step.
struct GroupDraw {
    double t = 0.0;
    std::vector<Vector> eps;
};

/// Network inputs C_i = (x_t,i, t, c) and velocity targets v_i for a group.
struct GroupInputs {
    Matrix inputs;   // one column per member
    Matrix targets;  // eps_i - x_i
};

GroupInputs group_inputs(const SampleGroup& group, const GroupDraw& draw, int num_conditions);

ImplicitScoreVector implicit_rewards(const ParamSet& policy, const ParamSet& reference,
                                     const SampleGroup& group, const GroupDraw& draw, double beta,
                                     int num_conditions);

double log_sum_exp(std::span<const double> x);

/// softmax(r_j / tau) over j in [start, k), max-subtracted.
TargetDistribution suffix_distribution(std::span<const double> rewards, std::size_t start, double tau);

/// logsumexp(s) - sum_i q(i, tau) s_i with q over the full group.
ScoreLoss top1_ce_loss(std::span<const double> s, std::span<const double> rewards, double tau);

/// sum_{i=0}^{k-2} [ logsumexp(s[i..]) - sum_{j>=i} q_i(j, tau) s_j ].
/// Scores enter the log-sum-exp unscaled; tau only shapes the targets.
ScoreLoss gdro_loss(std::span<const double> s, std::span<const double> rewards, double tau);

/// sum_{i=0}^{k-2} [ logsumexp(s[i..]) - s_i ]; the tau -> 0 limit of gdro_loss.
ScoreLoss rank_loss(std::span<const double> s);

/// -log sigmoid(s_plus - s_minus). Returns d/ds_plus, d/ds_minus in grad.
ScoreLoss dpo_loss(double s_plus, double s_minus);

/// |v_1 - v_theta(x_t,1, t, c)|^2 on the top-1 member, same draw as the scores.
double top1_reg(const ParamSet& policy, const SampleGroup& group, const GroupDraw& draw,
                int num_conditions);

LossBreakdown final_loss(double l_gdro, double l_reg, double gamma);

/// Plackett-Luce probability of `ranking` (ranking[i] = index of the item in
/// position i) under `scores`.
double pl_likelihood(std::span<const double> scores, std::span<const std::size_t> ranking);

}  // namespace gdro
