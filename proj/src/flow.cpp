#include "gdro/flow.hpp"

#include "gdro/io.hpp"

#include <cmath>
#include <sstream>

namespace gdro {

void FlowConfig::validate() const {
    if (total_timesteps < 1) throw std::invalid_argument("total_timesteps must be >= 1");
    if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0))
        throw std::invalid_argument("timestep bounds must satisfy 0 < t_min < t_max < 1");
    if (data_dim < 1) throw std::invalid_argument("data_dim must be positive");
}

std::vector<int> ModelConfig::widths() const {
    std::vector<int> w{input_dim()};
    for (int i = 0; i < hidden_layers; ++i) w.push_back(hidden_width);
    w.push_back(data_dim);
    return w;
}

PerturbedSample perturb(const Vector& x0, const Vector& eps, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("perturb: t must lie in [0, 1]");
    if (x0.size() != eps.size()) throw ShapeError("perturb: x0 and eps differ in length");
    PerturbedSample s;
    s.t = t;
    s.eps = eps;
    s.x_t = (1.0 - t) * x0 + t * eps;
    s.v_target = eps - x0;
    return s;
}

void write_network_input(Eigen::Ref<Vector> dst, const Vector& x_t, double t, int condition,
                         int num_conditions) {
    if (condition < 0 || condition >= num_conditions)
        throw std::out_of_range("condition " + std::to_string(condition) + " out of range");
    const auto d = x_t.size();
    dst.setZero();
    dst.head(d) = x_t;
    dst(d) = t;
    dst(d + 1 + condition) = 1.0;
}

Vector network_input(const Vector& x_t, double t, int condition, int num_conditions) {
    Vector in(x_t.size() + 1 + num_conditions);
    write_network_input(in, x_t, t, condition, num_conditions);
    return in;
}

FlowDraw draw_flow(const FlowConfig& config, KeyedRng& rng) {
    FlowDraw d;
    d.t = rng.uniform(config.t_min, config.t_max);
    d.eps.resize(config.data_dim);
    for (int i = 0; i < config.data_dim; ++i) d.eps(i) = rng.normal();
    return d;
}

LossClosure flow_matching_closure(std::span<const Example> batch, std::span<const FlowDraw> draws,
                                  int num_conditions) {
    if (batch.empty()) throw std::invalid_argument("flow_matching_loss: empty batch");
    if (batch.size() != draws.size()) throw ShapeError("flow_matching_loss: one draw per sample required");
    const auto n = static_cast<Eigen::Index>(batch.size());
    const auto dim = batch.front().x0.size();
    Matrix inputs(dim + 1 + num_conditions, n);
    Matrix targets(dim, n);
    for (Eigen::Index b = 0; b < n; ++b) {
        const auto& ex = batch[static_cast<std::size_t>(b)];
        const auto& dr = draws[static_cast<std::size_t>(b)];
        const auto ps = perturb(ex.x0, dr.eps, dr.t);
        write_network_input(inputs.col(b), ps.x_t, ps.t, ex.condition, num_conditions);
        targets.col(b) = ps.v_target;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    LossClosure closure;
    closure.inputs = std::move(inputs);
    closure.head = [targets = std::move(targets), inv_n](const Matrix& out, Matrix* d_out) {
        const Matrix resid = out - targets;
        if (d_out) *d_out = (2.0 * inv_n) * resid;
        double acc = 0.0;
        for (Eigen::Index b = 0; b < resid.cols(); ++b) acc += resid.col(b).squaredNorm();
        return acc * inv_n;
    };
    return closure;
}

double flow_matching_loss(const ParamSet& params, std::span<const Example> batch,
                          std::span<const FlowDraw> draws, int num_conditions) {
    return loss_value(params, flow_matching_closure(batch, draws, num_conditions));
}

double flow_matching_loss(const ParamSet& params, std::span<const Example> batch,
                          const FlowConfig& config, KeyedRng& rng, int num_conditions) {
    std::vector<FlowDraw> draws;
    draws.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) draws.push_back(draw_flow(config, rng));
    return flow_matching_loss(params, batch, draws, num_conditions);
}

Vector euler_sample(const VelocityField& field, int condition, const Vector& noise, int steps) {
    if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
    const double dt = 1.0 / steps;
    Vector x = noise;
    for (int j = 0; j < steps; ++j) {
        const double t = static_cast<double>(steps - j) / steps;
        x -= dt * field(x, t, condition);
        if (!x.allFinite()) throw SamplerError("non-finite state at sampler step " + std::to_string(j), j);
    }
    return x;
}

Matrix euler_sample_batch(const ParamSet& params, std::span<const int> conditions,
                          const Matrix& noise, int steps, int num_conditions) {
    if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
    if (static_cast<Eigen::Index>(conditions.size()) != noise.cols())
        throw ShapeError("euler_sample_batch: one condition per noise column required");
    const double dt = 1.0 / steps;
    const auto dim = noise.rows();
    Matrix x = noise;
    Matrix inputs = Matrix::Zero(dim + 1 + num_conditions, noise.cols());
    for (Eigen::Index b = 0; b < noise.cols(); ++b) {
        const int c = conditions[static_cast<std::size_t>(b)];
        if (c < 0 || c >= num_conditions) throw std::out_of_range("condition out of range");
        inputs(dim + 1 + c, b) = 1.0;
    }
    for (int j = 0; j < steps; ++j) {
        const double t = static_cast<double>(steps - j) / steps;
        inputs.topRows(dim) = x;
        inputs.row(dim).setConstant(t);
        Matrix v;
        try {
            v = mlp_forward(params, inputs);
        } catch (const NonFiniteError& e) {
            throw SamplerError(std::string(e.what()) + " at sampler step " + std::to_string(j), j);
        }
        x -= dt * v;
        if (!x.allFinite()) throw SamplerError("non-finite state at sampler step " + std::to_string(j), j);
    }
    return x;
}

Vector euler_sample(const ParamSet& params, int condition, const Vector& noise, int steps,
                    int num_conditions) {
    const int conds[] = {condition};
    Matrix n = noise;
    return euler_sample_batch(params, conds, n, steps, num_conditions).col(0);
}

ParamSet initial_params(const PretrainConfig& config) {
    return ParamSet::random(config.model.widths(), mix_key({config.seed, 0x1417ull}));
}

PretrainResult pretrain(const PretrainConfig& config, std::span<const Example> dataset) {
    config.flow.validate();
    if (dataset.empty()) throw std::invalid_argument("pretrain: empty dataset");
    if (config.batch_size < 1) throw std::invalid_argument("pretrain: batch_size must be >= 1");
    if (config.steps < 0) throw std::invalid_argument("pretrain: steps must be >= 0");

    PretrainResult result{initial_params(config), {}};
    AdamState adam = AdamState::zeros_like(result.params);
    const AdamConfig adam_config{.lr = config.lr};
    const int nc = config.model.num_conditions;

    std::vector<Example> batch(static_cast<std::size_t>(config.batch_size));
    std::vector<FlowDraw> draws(batch.size());
    for (std::int64_t step = 1; step <= config.steps; ++step) {
        KeyedRng rng({config.seed, 0x9E7Aull, static_cast<std::uint64_t>(step)});
        for (std::size_t b = 0; b < batch.size(); ++b) {
            batch[b] = dataset[rng.below(dataset.size())];
            draws[b] = draw_flow(config.flow, rng);
        }
        double loss = 0.0;
        ParamSet grad;
        try {
            grad = loss_gradient(result.params, flow_matching_closure(batch, draws, nc), &loss);
        } catch (const NonFiniteError& e) {
            throw TrainingDiverged(std::string("pretrain diverged: ") + e.what(), result.params, step);
        }
        auto next = adam_step(result.params, grad, adam, adam_config);
        if (!next.params.all_finite())
            throw TrainingDiverged("pretrain produced non-finite parameters", result.params, step);
        result.params = std::move(next.params);
        adam = std::move(next.state);
        result.losses.push_back({step, loss});
    }
    return result;
}

std::string loss_log_csv(std::span<const LossRecord> losses) {
    std::ostringstream ss;
    ss << "step,loss\n";
    for (const auto& r : losses) ss << r.step << ',' << format_double(r.loss) << '\n';
    return ss.str();
}

}  // namespace gdro
