#pragma once

// Rectified-flow machinery on the linear path x_t = (1 - t) x0 + t eps with
// velocity target eps - x0. Sampling integrates from t = 1 (noise) to t = 0.

#include "gdro/numkit.hpp"
#include "gdro/rng.hpp"
#include "gdro/task.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace gdro {

struct FlowConfig {
    int total_timesteps = 28;  // sampler steps
    double t_min = 0.01;
    double t_max = 0.99;
    int data_dim = 2;

    void validate() const;
};

struct ModelConfig {
    int data_dim = 2;
    int num_conditions = 8;
    int hidden_width = 64;
    int hidden_layers = 3;

    /// data_dim + 1 (time) + num_conditions (one-hot)
    int input_dim() const { return data_dim + 1 + num_conditions; }
    std::vector<int> widths() const;
};

struct PerturbedSample {
    Vector x_t;
    double t = 0.0;
    Vector eps;
    Vector v_target;
};

PerturbedSample perturb(const Vector& x0, const Vector& eps, double t);

/// concat(x_t, t, one_hot(condition))
Vector network_input(const Vector& x_t, double t, int condition, int num_conditions);
void write_network_input(Eigen::Ref<Vector> dst, const Vector& x_t, double t, int condition,
                         int num_conditions);

/// One (t, eps) draw per sample.
struct FlowDraw {
    double t = 0.0;
    Vector eps;
};

FlowDraw draw_flow(const FlowConfig& config, KeyedRng& rng);

/// Mean over the batch of |v_target - v_theta(x_t, t, c)|^2 on fixed draws.
LossClosure flow_matching_closure(std::span<const Example> batch, std::span<const FlowDraw> draws,
                                  int num_conditions);
double flow_matching_loss(const ParamSet& params, std::span<const Example> batch,
                          std::span<const FlowDraw> draws, int num_conditions);
/// Draws t ~ U(t_min, t_max) and eps ~ N(0, I) per sample from `rng`.
double flow_matching_loss(const ParamSet& params, std::span<const Example> batch,
                          const FlowConfig& config, KeyedRng& rng, int num_conditions);

using VelocityField = std::function<Vector(const Vector& x, double t, int condition)>;

class SamplerError : public std::runtime_error {
public:
    SamplerError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

/// Euler integration from t = 1 to t = 0 with step 1/steps:
///   x <- x - dt * v(x, t, c),  t_j = 1 - j / steps.
Vector euler_sample(const VelocityField& field, int condition, const Vector& noise, int steps);
Vector euler_sample(const ParamSet& params, int condition, const Vector& noise, int steps,
                    int num_conditions);
/// Column b of `noise` is integrated under conditions[b]. Bit-identical to the
/// single-sample overload column by column.
Matrix euler_sample_batch(const ParamSet& params, std::span<const int> conditions,
                          const Matrix& noise, int steps, int num_conditions);

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, ParamSet last_good, std::int64_t step)
        : std::runtime_error(what), last_good_(std::move(last_good)), step_(step) {}
    const ParamSet& last_good() const { return last_good_; }
    std::int64_t step() const { return step_; }

private:
    ParamSet last_good_;
    std::int64_t step_;
};

struct PretrainConfig {
    ModelConfig model;
    FlowConfig flow;
    CompassTask task;
    std::size_t dataset_size = 8192;
    std::int64_t steps = 3000;
    int batch_size = 256;
    double lr = 2e-3;
    std::uint64_t seed = 0;
};

struct LossRecord {
    std::int64_t step = 0;
    double loss = 0.0;
};

struct PretrainResult {
    ParamSet params;
    std::vector<LossRecord> losses;
};

/// Flow-matching pretraining with Adam. The result serves as the frozen
/// reference model. Throws TrainingDiverged carrying the last finite params.
PretrainResult pretrain(const PretrainConfig& config, std::span<const Example> dataset);
/// Initialization used by pretrain for a given config.
ParamSet initial_params(const PretrainConfig& config);

std::string loss_log_csv(std::span<const LossRecord> losses);

}  // namespace gdro
