#pragma once

// Dense numerics for the desk-scale velocity network: a tanh MLP with an
// analytic backward pass, Adam, parameter EMA and a finite-difference checker.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gdro {

using Vector = Eigen::VectorXd;
/// Column-major; one column per sample throughout the library.
using Matrix = Eigen::MatrixXd;
using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(const std::string& what, int layer)
        : std::runtime_error(what), layer_(layer) {}
    /// Index of the layer whose forward or backward value went non-finite.
    int layer() const { return layer_; }

private:
    int layer_;
};

struct LayerShape {
    int out = 0;
    int in = 0;
    bool operator==(const LayerShape&) const = default;
};
using ShapeDescriptor = std::vector<LayerShape>;

struct Layer {
    WeightMatrix weight;  // out x in
    Vector bias;          // out
};

/// Parameters of a fully-connected network. Hidden layers use tanh, the output
/// layer is linear.
class ParamSet {
public:
    ParamSet() = default;
    explicit ParamSet(std::vector<Layer> layers);

    static ParamSet zeros(const ShapeDescriptor& shape);
    /// Gaussian init with variance 1/fan_in; biases start at zero.
    static ParamSet random(const std::vector<int>& widths, std::uint64_t seed, double scale = 1.0);

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    std::size_t num_layers() const { return layers_.size(); }
    int input_dim() const;
    int output_dim() const;

    ShapeDescriptor shape() const;
    std::size_t size() const;
    bool all_finite() const;

    ParamSet zeros_like() const { return zeros(shape()); }

    /// Flat view in checkpoint order: per layer, row-major weights then bias.
    double coeff(std::size_t flat) const;
    double& coeff(std::size_t flat);
    std::vector<double> flatten() const;
    static ParamSet unflatten(const ShapeDescriptor& shape, const std::vector<double>& flat);

    /// this += alpha * other
    ParamSet& axpy(double alpha, const ParamSet& other);
    ParamSet& scale(double alpha);
    double dot(const ParamSet& other) const;
    double squared_norm() const { return dot(*this); }

    bool operator==(const ParamSet& other) const;

private:
    std::vector<Layer> layers_;
};

void require_same_shape(const ParamSet& a, const ParamSet& b, const char* context);

/// Batched forward pass. Columns of `inputs` are samples; each column is
/// evaluated independently so the result does not depend on batch size.
Matrix mlp_forward(const ParamSet& params, const Matrix& inputs);
Vector mlp_forward(const ParamSet& params, const Vector& input);

/// Maps network outputs to a scalar; fills d_outputs (same shape as outputs)
/// with the derivative when it is non-null.
using OutputHead = std::function<double(const Matrix& outputs, Matrix* d_outputs)>;

/// A scalar loss that touches the parameters only through network evaluations
/// at fixed inputs. Anything else the loss depends on (reference-network
/// outputs, targets, draws) is captured by the head.
struct LossClosure {
    Matrix inputs;
    OutputHead head;
};

double loss_value(const ParamSet& params, const LossClosure& loss);
/// Reverse-mode gradient. Throws NonFiniteError naming the layer index.
ParamSet loss_gradient(const ParamSet& params, const LossClosure& loss, double* value = nullptr);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    ParamSet m;
    ParamSet v;
    std::int64_t step = 0;

    static AdamState zeros_like(const ParamSet& params);
};

struct AdamUpdate {
    ParamSet params;
    AdamState state;
};

AdamUpdate adam_step(const ParamSet& params, const ParamSet& grads, const AdamState& state,
                     const AdamConfig& config);

/// min(0.001 i, 0.5): the weight the i-th EMA update puts on live parameters.
double ema_rate(std::int64_t step);

struct EmaState {
    ParamSet shadow;
    std::int64_t step_count = 0;
};

EmaState ema_update(const EmaState& state, const ParamSet& params);

struct FiniteDiffOptions {
    double h = 1e-5;
    /// 0 checks every coordinate; otherwise a seeded random subset of this size.
    std::size_t max_coordinates = 0;
    std::uint64_t seed = 0;
};

/// Maximum over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// using central differences.
double finite_diff_check(const ParamSet& params, const LossClosure& loss,
                         const FiniteDiffOptions& options = {});

// Checkpoints: flat little-endian binary plus a JSON sidecar at `<path>.json`.
//   bytes 0..7    magic "GDROPRM1"
//   uint32        layer count L
//   L x uint32[2] (out, in) per layer
//   doubles       per layer: out*in weights row-major, then out biases
struct Checkpoint {
    ParamSet params;
    std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_sidecar_path(const std::filesystem::path& path);

}  // namespace gdro
