#include "gdro/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gdro {

namespace {

void require_group_size(std::size_t k, const char* who) {
    if (k < 2) throw std::invalid_argument(std::string(who) + ": group size must be at least 2");
}

void require_tau(double tau, const char* who) {
    if (!(tau > 0.0)) throw std::invalid_argument(std::string(who) + ": tau must be positive");
}

void require_matching(std::span<const double> s, std::span<const double> rewards, const char* who) {
    if (s.size() != rewards.size())
        throw std::invalid_argument(std::string(who) + ": scores and rewards differ in length");
}

/// Adds softmax(x[start..]) - target into grad[start..] and returns
/// logsumexp(x[start..]) - <target, x[start..]>.
double suffix_ce(std::span<const double> s, std::size_t start, std::span<const double> target,
                 std::vector<double>& grad) {
    const auto tail = s.subspan(start);
    const double lse = log_sum_exp(tail);
    double dot = 0.0;
    for (std::size_t j = 0; j < tail.size(); ++j) {
        dot += target[j] * tail[j];
        grad[start + j] += std::exp(tail[j] - lse) - target[j];
    }
    return lse - dot;
}

}  // namespace

GroupInputs group_inputs(const SampleGroup& group, const GroupDraw& draw, int num_conditions) {
    const std::size_t k = group.samples.size();
    if (draw.eps.size() != k) throw ShapeError("group draw must carry one noise vector per member");
    if (k == 0) throw std::invalid_argument("empty group");
    const auto dim = group.samples.front().size();
    GroupInputs gi{Matrix(dim + 1 + num_conditions, static_cast<Eigen::Index>(k)),
                   Matrix(dim, static_cast<Eigen::Index>(k))};
    for (std::size_t i = 0; i < k; ++i) {
        if (group.samples[i].size() != dim || draw.eps[i].size() != dim)
            throw ShapeError("group member " + std::to_string(i) + " has mismatched dimension");
        const auto ps = perturb(group.samples[i], draw.eps[i], draw.t);
        const auto col = static_cast<Eigen::Index>(i);
        write_network_input(gi.inputs.col(col), ps.x_t, ps.t, group.condition, num_conditions);
        gi.targets.col(col) = ps.v_target;
    }
    return gi;
}

ImplicitScoreVector implicit_rewards(const ParamSet& policy, const ParamSet& reference,
                                     const SampleGroup& group, const GroupDraw& draw, double beta,
                                     int num_conditions) {
    require_same_shape(policy, reference, "implicit_rewards");
    const auto gi = group_inputs(group, draw, num_conditions);
    const Matrix vp = mlp_forward(policy, gi.inputs);
    const Matrix vr = mlp_forward(reference, gi.inputs);
    ImplicitScoreVector out{{}, draw.t, beta};
    out.s.reserve(group.samples.size());
    for (Eigen::Index i = 0; i < gi.targets.cols(); ++i) {
        const double rp = (gi.targets.col(i) - vp.col(i)).squaredNorm();
        const double rr = (gi.targets.col(i) - vr.col(i)).squaredNorm();
        out.s.push_back(-beta * (rp - rr));
    }
    return out;
}

double log_sum_exp(std::span<const double> x) {
    if (x.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double v : x) acc += std::exp(v - m);
    return m + std::log(acc);
}

TargetDistribution suffix_distribution(std::span<const double> rewards, std::size_t start, double tau) {
    require_tau(tau, "suffix_distribution");
    if (start >= rewards.size()) throw std::out_of_range("suffix_distribution: start beyond group");
    const auto tail = rewards.subspan(start);
    const double m = *std::max_element(tail.begin(), tail.end());
    TargetDistribution d{std::vector<double>(tail.size()), tau, start};
    double z = 0.0;
    for (std::size_t j = 0; j < tail.size(); ++j) {
        d.q[j] = std::exp((tail[j] - m) / tau);
        z += d.q[j];
    }
    for (double& q : d.q) q /= z;
    return d;
}

ScoreLoss top1_ce_loss(std::span<const double> s, std::span<const double> rewards, double tau) {
    require_matching(s, rewards, "top1_ce_loss");
    require_group_size(s.size(), "top1_ce_loss");
    require_tau(tau, "top1_ce_loss");
    ScoreLoss out{0.0, std::vector<double>(s.size(), 0.0)};
    const auto q = suffix_distribution(rewards, 0, tau);
    out.value = suffix_ce(s, 0, q.q, out.grad);
    return out;
}

ScoreLoss gdro_loss(std::span<const double> s, std::span<const double> rewards, double tau) {
    require_matching(s, rewards, "gdro_loss");
    require_group_size(s.size(), "gdro_loss");
    require_tau(tau, "gdro_loss");
    ScoreLoss out{0.0, std::vector<double>(s.size(), 0.0)};
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        const auto q = suffix_distribution(rewards, i, tau);
        out.value += suffix_ce(s, i, q.q, out.grad);
    }
    return out;
}

ScoreLoss rank_loss(std::span<const double> s) {
    require_group_size(s.size(), "rank_loss");
    ScoreLoss out{0.0, std::vector<double>(s.size(), 0.0)};
    // Target for the suffix starting at i is one-hot on its first entry.
    std::vector<double> one_hot(s.size(), 0.0);
    one_hot[0] = 1.0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) out.value += suffix_ce(s, i, one_hot, out.grad);
    return out;
}

ScoreLoss dpo_loss(double s_plus, double s_minus) {
    const double delta = s_plus - s_minus;
    // softplus(-delta) without overflow
    const double value = delta > 0 ? std::log1p(std::exp(-delta)) : -delta + std::log1p(std::exp(delta));
    const double sig_neg = 1.0 / (1.0 + std::exp(delta));  // sigmoid(-delta)
    return {value, {-sig_neg, sig_neg}};
}

double top1_reg(const ParamSet& policy, const SampleGroup& group, const GroupDraw& draw,
                int num_conditions) {
    const auto gi = group_inputs(group, draw, num_conditions);
    const Matrix top = gi.inputs.col(0);
    const Matrix v = mlp_forward(policy, top);
    return (gi.targets.col(0) - v.col(0)).squaredNorm();
}

LossBreakdown final_loss(double l_gdro, double l_reg, double gamma) {
    if (!(gamma >= 0.0)) throw std::invalid_argument("final_loss: gamma must be non-negative");
    return {l_gdro, l_reg, l_gdro + gamma * l_reg, gamma};
}

double pl_likelihood(std::span<const double> scores, std::span<const std::size_t> ranking) {
    const std::size_t k = scores.size();
    if (ranking.size() != k) throw std::invalid_argument("pl_likelihood: ranking length != item count");
    std::vector<bool> seen(k, false);
    for (std::size_t idx : ranking) {
        if (idx >= k || seen[idx]) throw std::invalid_argument("pl_likelihood: ranking is not a permutation");
        seen[idx] = true;
    }
    std::vector<double> ordered(k);
    for (std::size_t i = 0; i < k; ++i) ordered[i] = scores[ranking[i]];
    double log_p = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        log_p += ordered[i] - log_sum_exp(std::span<const double>(ordered).subspan(i));
    }
    return std::exp(log_p);
}

}  // namespace gdro
