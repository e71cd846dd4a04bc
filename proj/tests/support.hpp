#pragma once
// Shared fixtures for the unit and acceptance tests.
#include "gdro/loss.hpp"
#include "gdro/numkit.hpp"
#include "gdro/rng.hpp"
#include "gdro/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace gdro::testing {

/// Random tanh MLP with non-zero biases so every coordinate carries gradient.
inline ParamSet random_net(const std::vector<int>& widths, std::uint64_t seed, double bias_scale = 0.3) {
    ParamSet p = ParamSet::random(widths, seed);
    KeyedRng rng({seed, 0xB1A5});
    for (auto& layer : p.layers())
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = bias_scale * rng.normal();
    return p;
}

/// Widths of a small conditional velocity net: (x, t, one-hot) -> x.
inline std::vector<int> small_widths(int nc = 3, int hidden = 6) { return {2 + 1 + nc, hidden, hidden, 2}; }

inline std::vector<double> random_scores(std::size_t k, KeyedRng& rng, double scale = 2.0) {
    std::vector<double> s(k);
    for (double& v : s) v = scale * rng.normal();
    return s;
}

/// Strictly descending rewards in (0, 1).
inline std::vector<double> descending_rewards(std::size_t k, KeyedRng& rng) {
    std::vector<double> r(k);
    for (double& v : r) v = rng.uniform();
    std::sort(r.begin(), r.end(), std::greater<>());
    for (std::size_t i = 1; i < k; ++i)
        if (r[i] >= r[i - 1]) r[i] = r[i - 1] - 1e-3;
    return r;
}

inline SampleGroup random_group(std::size_t k, int condition, KeyedRng& rng) {
    std::vector<Vector> samples;
    std::vector<double> rewards;
    for (std::size_t i = 0; i < k; ++i) {
        Vector x(2);
        x << rng.normal(), rng.normal();
        samples.push_back(x);
        rewards.push_back(rng.uniform());
    }
    return sort_group(std::move(samples), std::move(rewards), condition, 0, "sector");
}

inline GroupDraw random_draw(std::size_t k, KeyedRng& rng) {
    GroupDraw d;
    d.t = rng.uniform(0.01, 0.99);
    for (std::size_t i = 0; i < k; ++i) {
        Vector e(2);
        e << rng.normal(), rng.normal();
        d.eps.push_back(e);
    }
    return d;
}

/// Perturbs every parameter so a policy differs from its reference.
inline ParamSet jitter(const ParamSet& p, std::uint64_t seed, double scale) {
    ParamSet out = p;
    KeyedRng rng({seed, 0x7177});
    for (std::size_t i = 0; i < out.size(); ++i) out.coeff(i) += scale * rng.normal();
    return out;
}

/// Direct transcription of the group loss with naive exponentials; only for
/// moderate score ranges.
inline double gdro_oracle(const std::vector<double>& s, const std::vector<double>& r, double tau) {
    const std::size_t k = s.size();
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < k; ++i) {
        double zs = 0.0, zr = 0.0;
        for (std::size_t j = i; j < k; ++j) {
            zs += std::exp(s[j]);
            zr += std::exp(r[j] / tau);
        }
        double cross = 0.0;
        for (std::size_t j = i; j < k; ++j) cross += std::exp(r[j] / tau) / zr * s[j];
        total += std::log(zs) - cross;
    }
    return total;
}

/// Network closure for `score_loss(s) + gamma * top-1 residual` of one group,
/// assembled independently of the training harness.
inline LossClosure score_closure(const ParamSet& reference, const SampleGroup& group, const GroupDraw& draw,
                                 double beta, double gamma, int nc,
                                 std::function<ScoreLoss(const std::vector<double>&)> score_loss) {
    const auto gi = group_inputs(group, draw, nc);
    const Matrix ref = mlp_forward(reference, gi.inputs);
    std::vector<double> ref_resid;
    for (Eigen::Index i = 0; i < gi.targets.cols(); ++i)
        ref_resid.push_back((gi.targets.col(i) - ref.col(i)).squaredNorm());
    return {gi.inputs, [=, targets = gi.targets](const Matrix& out, Matrix* d) {
                std::vector<double> s;
                for (Eigen::Index i = 0; i < out.cols(); ++i)
                    s.push_back(-beta * ((targets.col(i) - out.col(i)).squaredNorm() - ref_resid[static_cast<std::size_t>(i)]));
                const auto sl = score_loss(s);
                const double reg = (targets.col(0) - out.col(0)).squaredNorm();
                if (d) {
                    d->setZero(out.rows(), out.cols());
                    for (Eigen::Index i = 0; i < out.cols(); ++i)
                        d->col(i) = sl.grad[static_cast<std::size_t>(i)] * -2.0 * beta * (out.col(i) - targets.col(i));
                    d->col(0) += 2.0 * gamma * (out.col(0) - targets.col(0));
                }
                return sl.value + gamma * reg;
            }};
}

}  // namespace gdro::testing
