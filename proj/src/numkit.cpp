#include "gdro/numkit.hpp"

#include "gdro/io.hpp"
#include "gdro/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace gdro {

namespace {

std::string shape_string(const ShapeDescriptor& shape) {
    std::ostringstream ss;
    ss << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) ss << ", ";
        ss << shape[i].out << 'x' << shape[i].in;
    }
    ss << ']';
    return ss.str();
}

template <typename Fn>
void for_each_block(const ParamSet& a, Fn&& fn) {
    for (const auto& layer : a.layers()) {
        fn(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        fn(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
}

}  // namespace

ParamSet::ParamSet(std::vector<Layer> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.bias.size() != l.weight.rows()) {
            throw ShapeError("layer " + std::to_string(i) + ": bias length " +
                             std::to_string(l.bias.size()) + " != weight rows " +
                             std::to_string(l.weight.rows()));
        }
        if (i > 0 && layers_[i - 1].weight.rows() != l.weight.cols()) {
            throw ShapeError("layer " + std::to_string(i) + ": input width " +
                             std::to_string(l.weight.cols()) + " != previous output width " +
                             std::to_string(layers_[i - 1].weight.rows()));
        }
    }
}

ParamSet ParamSet::zeros(const ShapeDescriptor& shape) {
    std::vector<Layer> layers;
    layers.reserve(shape.size());
    for (const auto& s : shape) {
        layers.push_back({WeightMatrix::Zero(s.out, s.in), Vector::Zero(s.out)});
    }
    return ParamSet(std::move(layers));
}

ParamSet ParamSet::random(const std::vector<int>& widths, std::uint64_t seed, double scale) {
    if (widths.size() < 2) throw ShapeError("an MLP needs at least input and output widths");
    KeyedRng rng({seed, 0x5EED5EEDull});
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const int in = widths[i];
        const int out = widths[i + 1];
        if (in <= 0 || out <= 0) throw ShapeError("layer widths must be positive");
        const double std_dev = scale / std::sqrt(static_cast<double>(in));
        WeightMatrix w(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) w(r, c) = std_dev * rng.normal();
        layers.push_back({std::move(w), Vector::Zero(out)});
    }
    return ParamSet(std::move(layers));
}

int ParamSet::input_dim() const {
    return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int ParamSet::output_dim() const {
    return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

ShapeDescriptor ParamSet::shape() const {
    ShapeDescriptor out;
    for (const auto& l : layers_)
        out.push_back({static_cast<int>(l.weight.rows()), static_cast<int>(l.weight.cols())});
    return out;
}

std::size_t ParamSet::size() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

bool ParamSet::all_finite() const {
    for (const auto& l : layers_)
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
}

double ParamSet::coeff(std::size_t flat) const {
    return const_cast<ParamSet*>(this)->coeff(flat);
}

double& ParamSet::coeff(std::size_t flat) {
    for (auto& l : layers_) {
        const auto nw = static_cast<std::size_t>(l.weight.size());
        if (flat < nw) return l.weight.data()[flat];
        flat -= nw;
        const auto nb = static_cast<std::size_t>(l.bias.size());
        if (flat < nb) return l.bias.data()[flat];
        flat -= nb;
    }
    throw std::out_of_range("ParamSet::coeff index out of range");
}

std::vector<double> ParamSet::flatten() const {
    std::vector<double> flat;
    flat.reserve(size());
    for_each_block(*this, [&](const double* p, std::size_t n) { flat.insert(flat.end(), p, p + n); });
    return flat;
}

ParamSet ParamSet::unflatten(const ShapeDescriptor& shape, const std::vector<double>& flat) {
    ParamSet out = zeros(shape);
    if (flat.size() != out.size()) {
        throw ShapeError("unflatten: expected " + std::to_string(out.size()) + " values for shape " +
                         shape_string(shape) + ", got " + std::to_string(flat.size()));
    }
    std::size_t pos = 0;
    for (auto& l : out.layers_) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.weight.size(), l.weight.data());
        pos += static_cast<std::size_t>(l.weight.size());
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.data());
        pos += static_cast<std::size_t>(l.bias.size());
    }
    return out;
}

void require_same_shape(const ParamSet& a, const ParamSet& b, const char* context) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(context) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
    }
}

ParamSet& ParamSet::axpy(double alpha, const ParamSet& other) {
    require_same_shape(*this, other, "axpy");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].weight += alpha * other.layers_[i].weight;
        layers_[i].bias += alpha * other.layers_[i].bias;
    }
    return *this;
}

ParamSet& ParamSet::scale(double alpha) {
    for (auto& l : layers_) {
        l.weight *= alpha;
        l.bias *= alpha;
    }
    return *this;
}

double ParamSet::dot(const ParamSet& other) const {
    require_same_shape(*this, other, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        acc += layers_[i].weight.cwiseProduct(other.layers_[i].weight).sum();
        acc += layers_[i].bias.dot(other.layers_[i].bias);
    }
    return acc;
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (shape() != other.shape()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].weight != other.layers_[i].weight) return false;
        if (layers_[i].bias != other.layers_[i].bias) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

/// activations[0] is the input; activations[l+1] is the output of layer l
/// (post-tanh for hidden layers).
std::vector<Matrix> forward_trace(const ParamSet& params, const Matrix& inputs) {
    if (params.num_layers() == 0) throw ShapeError("mlp_forward: empty network");
    if (inputs.rows() != params.input_dim()) {
        throw ShapeError("mlp_forward: input length " + std::to_string(inputs.rows()) +
                         " does not match first layer width " + std::to_string(params.input_dim()));
    }
    const auto& layers = params.layers();
    std::vector<Matrix> acts;
    acts.reserve(layers.size() + 1);
    acts.push_back(inputs);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const Matrix& in = acts.back();
        Matrix out(layer.weight.rows(), in.cols());
        for (Eigen::Index b = 0; b < in.cols(); ++b) {
            out.col(b).noalias() = layer.weight * in.col(b);
            out.col(b) += layer.bias;
        }
        if (l + 1 < layers.size()) out = out.array().tanh().matrix();
        if (!out.allFinite()) {
            throw NonFiniteError("non-finite activation in layer " + std::to_string(l),
                                 static_cast<int>(l));
        }
        acts.push_back(std::move(out));
    }
    return acts;
}

}  // namespace

Matrix mlp_forward(const ParamSet& params, const Matrix& inputs) {
    return std::move(forward_trace(params, inputs).back());
}

Vector mlp_forward(const ParamSet& params, const Vector& input) {
    Matrix in = input;
    return mlp_forward(params, in).col(0);
}

double loss_value(const ParamSet& params, const LossClosure& loss) {
    const Matrix out = mlp_forward(params, loss.inputs);
    const double v = loss.head(out, nullptr);
    if (!std::isfinite(v)) {
        throw NonFiniteError("non-finite loss value", static_cast<int>(params.num_layers()));
    }
    return v;
}

ParamSet loss_gradient(const ParamSet& params, const LossClosure& loss, double* value) {
    const auto acts = forward_trace(params, loss.inputs);
    const auto& layers = params.layers();
    const int num_layers = static_cast<int>(layers.size());

    Matrix delta;
    const double v = loss.head(acts.back(), &delta);
    if (!std::isfinite(v) || !delta.allFinite()) {
        throw NonFiniteError("non-finite loss or output gradient", num_layers);
    }
    if (delta.rows() != acts.back().rows() || delta.cols() != acts.back().cols()) {
        throw ShapeError("loss head returned a d_outputs block of the wrong shape");
    }
    if (value) *value = v;

    ParamSet grad = params.zeros_like();
    auto& g = grad.layers();
    for (int l = num_layers - 1; l >= 0; --l) {
        // delta holds dL/d(pre-activation) of layer l here.
        const Matrix& in = acts[static_cast<std::size_t>(l)];
        g[static_cast<std::size_t>(l)].weight.noalias() = delta * in.transpose();
        g[static_cast<std::size_t>(l)].bias = delta.rowwise().sum();
        if (l > 0) {
            Matrix back = layers[static_cast<std::size_t>(l)].weight.transpose() * delta;
            back.array() *= (1.0 - in.array().square());
            if (!back.allFinite()) {
                throw NonFiniteError("non-finite gradient in layer " + std::to_string(l - 1), l - 1);
            }
            delta = std::move(back);
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Adam / EMA

AdamState AdamState::zeros_like(const ParamSet& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
}

AdamUpdate adam_step(const ParamSet& params, const ParamSet& grads, const AdamState& state,
                     const AdamConfig& config) {
    require_same_shape(params, grads, "adam_step");
    require_same_shape(params, state.m, "adam_step");
    require_same_shape(params, state.v, "adam_step");
    if (!(config.lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");

    AdamUpdate out{params, state};
    out.state.step = state.step + 1;
    const double t = static_cast<double>(out.state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);

    auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
        p.array() -= config.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.eps);
    };
    for (std::size_t i = 0; i < params.num_layers(); ++i) {
        auto& p = out.params.layers()[i];
        auto& m = out.state.m.layers()[i];
        auto& v = out.state.v.layers()[i];
        const auto& g = grads.layers()[i];
        update(p.weight, m.weight, v.weight, g.weight);
        update(p.bias, m.bias, v.bias, g.bias);
    }
    return out;
}

double ema_rate(std::int64_t step) {
    return std::min(static_cast<double>(step) / 1000.0, 0.5);
}

EmaState ema_update(const EmaState& state, const ParamSet& params) {
    require_same_shape(state.shadow, params, "ema_update");
    EmaState out{state.shadow, state.step_count + 1};
    const double eta = ema_rate(out.step_count);
    out.shadow.scale(1.0 - eta).axpy(eta, params);
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences

double finite_diff_check(const ParamSet& params, const LossClosure& loss,
                         const FiniteDiffOptions& options) {
    const ParamSet analytic = loss_gradient(params, loss);
    const std::size_t n = params.size();

    std::vector<std::size_t> coords;
    if (options.max_coordinates == 0 || options.max_coordinates >= n) {
        coords.resize(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
        KeyedRng rng({options.seed, 0xFD});
        auto perm = random_permutation(n, rng);
        coords.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(options.max_coordinates));
    }

    ParamSet probe = params;
    double worst = 0.0;
    for (std::size_t i : coords) {
        const double orig = probe.coeff(i);
        probe.coeff(i) = orig + options.h;
        const double plus = loss_value(probe, loss);
        probe.coeff(i) = orig - options.h;
        const double minus = loss_value(probe, loss);
        probe.coeff(i) = orig;
        const double numeric = (plus - minus) / (2.0 * options.h);
        const double a = analytic.coeff(i);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'D', 'R', 'O', 'P', 'R', 'M', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

template <typename T>
void put(std::string& buf, T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos, const std::string& path) {
    if (pos + sizeof(T) > buf.size()) throw IoError("truncated checkpoint: " + path);
    T value;
    std::memcpy(&value, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

}  // namespace

std::string checkpoint_sidecar_path(const std::filesystem::path& path) {
    return path.string() + ".json";
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, std::uint64_t seed) {
    std::string buf(kMagic, sizeof(kMagic));
    const auto shape = params.shape();
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(shape.size()));
    for (const auto& s : shape) {
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.out));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.in));
    }
    for (double v : params.flatten()) put<double>(buf, v);

    nlohmann::json side;
    side["format"] = "gdro-params";
    side["version"] = 1;
    side["activation"] = "tanh";
    side["seed"] = seed;
    side["num_params"] = params.size();
    side["layers"] = nlohmann::json::array();
    for (const auto& s : shape) side["layers"].push_back({{"out", s.out}, {"in", s.in}});

    write_file_atomic(path, buf);
    write_file_atomic(checkpoint_sidecar_path(path), side.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    const std::string name = path.string();
    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError("not a parameter checkpoint: " + name);
    }
    std::size_t pos = sizeof(kMagic);
    const auto num_layers = take<std::uint32_t>(buf, pos, name);
    ShapeDescriptor shape(num_layers);
    for (auto& s : shape) {
        s.out = static_cast<int>(take<std::uint32_t>(buf, pos, name));
        s.in = static_cast<int>(take<std::uint32_t>(buf, pos, name));
    }
    std::size_t count = 0;
    for (const auto& s : shape) count += static_cast<std::size_t>(s.out) * (s.in + 1);
    if (buf.size() - pos != count * sizeof(double)) {
        throw IoError("checkpoint payload size does not match its shape header: " + name);
    }
    std::vector<double> flat(count);
    std::memcpy(flat.data(), buf.data() + pos, count * sizeof(double));

    Checkpoint ck{ParamSet::unflatten(shape, flat), 0};
    const auto side_path = checkpoint_sidecar_path(path);
    if (std::filesystem::exists(side_path)) {
        const auto side = nlohmann::json::parse(read_file(side_path));
        ShapeDescriptor side_shape;
        for (const auto& l : side.at("layers"))
            side_shape.push_back({l.at("out").get<int>(), l.at("in").get<int>()});
        if (side_shape != shape) throw IoError("sidecar shape disagrees with checkpoint: " + name);
        ck.seed = side.at("seed").get<std::uint64_t>();
    }
    return ck;
}

}  // namespace gdro
