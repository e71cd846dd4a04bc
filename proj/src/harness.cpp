#include "gdro/harness.hpp"

#include "gdro/io.hpp"
#include "gdro/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

namespace gdro {

namespace {

constexpr std::uint64_t kEvalSalt = 0xE7A1;
constexpr std::uint64_t kEpochSalt = 0xE90C;
constexpr std::uint64_t kStepSalt = 0x57E9;
constexpr std::uint64_t kProbeSalt = 0x9B0B;

}  // namespace

LossMode parse_loss_mode(std::string_view name) {
    if (name == "gdro") return LossMode::Gdro;
    if (name == "rank") return LossMode::Rank;
    if (name == "dpo") return LossMode::Dpo;
    throw std::invalid_argument("unknown mode '" + std::string(name) + "' (expected gdro|rank|dpo)");
}

std::string loss_mode_name(LossMode mode) {
    switch (mode) {
        case LossMode::Gdro: return "gdro";
        case LossMode::Rank: return "rank";
        case LossMode::Dpo: return "dpo";
    }
    return "gdro";
}

int TrainConfig::groups_per_step() const {
    return total_images_per_step / effective_k();
}

void TrainConfig::validate() const {
    if (k < 2) throw std::invalid_argument("train: k must be at least 2 (got " + std::to_string(k) + ")");
    if (mode == LossMode::Gdro && !(tau > 0.0)) throw std::invalid_argument("train: tau must be positive");
    if (!(beta > 0.0)) throw std::invalid_argument("train: beta must be positive");
    if (!(gamma >= 0.0)) throw std::invalid_argument("train: gamma must be non-negative");
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    if (steps < 0) throw std::invalid_argument("train: steps must be non-negative");
    if (eval_interval < 1) throw std::invalid_argument("train: eval_interval must be positive");
    if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0))
        throw std::invalid_argument("train: timestep bounds must satisfy 0 < t_min < t_max < 1");
    if (groups_per_step() < 1)
        throw std::invalid_argument("train: total_images_per_step must be at least k");
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::vector<int> eval_conditions(const EvalConfig& config, const CompassTask& task) {
    if (!config.conditions.empty()) return config.conditions;
    std::vector<int> all(static_cast<std::size_t>(task.num_conditions));
    for (int c = 0; c < task.num_conditions; ++c) all[static_cast<std::size_t>(c)] = c;
    return all;
}

}  // namespace

Matrix eval_noise(const EvalConfig& config, const CompassTask& task, int dim) {
    const auto conds = eval_conditions(config, task);
    Matrix noise(dim, static_cast<Eigen::Index>(conds.size()) * config.repeats);
    Eigen::Index col = 0;
    for (int c : conds) {
        for (int r = 0; r < config.repeats; ++r, ++col) {
            KeyedRng rng({config.seed, kEvalSalt, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(r)});
            for (int d = 0; d < dim; ++d) noise(d, col) = rng.normal();
        }
    }
    return noise;
}

EvalResult evaluate(const ParamSet& params, const EvalConfig& config, const CompassTask& task) {
    if (config.repeats < 1) throw std::invalid_argument("evaluate: repeats must be positive");
    const auto conds = eval_conditions(config, task);
    std::vector<int> col_conds;
    for (int c : conds)
        for (int r = 0; r < config.repeats; ++r) col_conds.push_back(c);

    EvalResult res;
    res.samples = euler_sample_batch(params, col_conds, eval_noise(config, task, params.output_dim()),
                                     config.sampler_steps, task.num_conditions);
    double reward_sum = 0.0;
    double quality_sum = 0.0;
    for (Eigen::Index b = 0; b < res.samples.cols(); ++b) {
        const Vector x = res.samples.col(b);
        reward_sum += reward(config.reward, x, col_conds[static_cast<std::size_t>(b)], task);
        quality_sum += quality_score(x, task);
    }
    const auto n = static_cast<double>(res.samples.cols());
    res.mean_reward = reward_sum / n;
    res.mean_quality = quality_sum / n;
    const double facets[] = {res.mean_quality};
    res.corrected_score = corrected_score(res.mean_reward, facets, ScoreKind::OcrLike);
    return res;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::size_t> subsample_members(std::size_t group_size, std::size_t k, KeyedRng& rng) {
    if (k > group_size) throw std::invalid_argument("cannot take " + std::to_string(k) +
                                                    " members from a group of " + std::to_string(group_size));
    std::vector<std::size_t> idx(group_size);
    for (std::size_t i = 0; i < group_size; ++i) idx[i] = i;
    if (k == group_size) return idx;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.below(group_size - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<BatchGroup> draw_step(const TrainConfig& config, const RolloutStore& store,
                                  std::int64_t step) {
    const std::size_t n = store.groups.size();
    if (n == 0) throw std::invalid_argument("draw_step: empty rollout store");
    const auto k = static_cast<std::size_t>(config.effective_k());
    const auto per_step = static_cast<std::size_t>(config.groups_per_step());
    if (static_cast<std::size_t>(store.meta.k) < k)
        throw std::invalid_argument("draw_step: store k " + std::to_string(store.meta.k) +
                                    " is smaller than training k " + std::to_string(k));

    std::vector<BatchGroup> batch;
    batch.reserve(per_step);
    std::uint64_t cached_epoch = ~std::uint64_t{0};
    std::vector<std::size_t> perm;
    for (std::size_t g = 0; g < per_step; ++g) {
        const std::uint64_t pos = static_cast<std::uint64_t>(step - 1) * per_step + g;
        const std::uint64_t epoch = pos / n;
        if (epoch != cached_epoch) {
            KeyedRng erng({config.seed, kEpochSalt, epoch});
            perm = random_permutation(n, erng);
            cached_epoch = epoch;
        }
        const std::size_t index = perm[pos % n];
        const SampleGroup& src = store.groups[index];

        KeyedRng rng({config.seed, kStepSalt, static_cast<std::uint64_t>(step), g});
        const auto members = subsample_members(src.k(), k, rng);
        BatchGroup bg;
        bg.store_index = index;
        bg.group.condition = src.condition;
        bg.group.seed = src.seed;
        bg.group.reward_name = src.reward_name;
        for (std::size_t m : members) {
            bg.group.samples.push_back(src.samples[m]);
            bg.group.rewards.push_back(src.rewards[m]);
        }
        bg.draw.t = rng.uniform(config.t_min, config.t_max);
        const auto dim = src.samples.front().size();
        for (std::size_t m = 0; m < k; ++m) {
            Vector eps(dim);
            for (Eigen::Index d = 0; d < dim; ++d) eps(d) = rng.normal();
            bg.draw.eps.push_back(std::move(eps));
        }
        batch.push_back(std::move(bg));
    }
    return batch;
}

StepLoss make_step_loss(const TrainConfig& config, const ParamSet& reference,
                        std::span<const BatchGroup> batch, int num_conditions) {
    if (batch.empty()) throw std::invalid_argument("make_step_loss: empty batch");
    std::vector<GroupInputs> parts;
    std::vector<Eigen::Index> offsets;
    Eigen::Index total = 0;
    for (const auto& bg : batch) {
        parts.push_back(group_inputs(bg.group, bg.draw, num_conditions));
        offsets.push_back(total);
        total += parts.back().inputs.cols();
    }
    Matrix inputs(parts.front().inputs.rows(), total);
    Matrix targets(parts.front().targets.rows(), total);
    for (std::size_t g = 0; g < parts.size(); ++g) {
        inputs.middleCols(offsets[g], parts[g].inputs.cols()) = parts[g].inputs;
        targets.middleCols(offsets[g], parts[g].targets.cols()) = parts[g].targets;
    }
    const Matrix ref_out = mlp_forward(reference, inputs);
    Vector ref_resid(total);
    for (Eigen::Index i = 0; i < total; ++i) ref_resid(i) = (targets.col(i) - ref_out.col(i)).squaredNorm();

    std::vector<std::vector<double>> rewards;
    for (const auto& bg : batch) rewards.push_back(bg.group.rewards);

    auto breakdown = std::make_shared<LossBreakdown>();
    const double inv_groups = 1.0 / static_cast<double>(batch.size());
    LossClosure closure;
    closure.inputs = std::move(inputs);
    closure.head = [=, targets = std::move(targets), ref_resid = std::move(ref_resid),
                    rewards = std::move(rewards)](const Matrix& out, Matrix* d_out) {
        if (d_out) d_out->setZero(out.rows(), out.cols());
        double score_sum = 0.0;
        double reg_sum = 0.0;
        std::vector<double> s;
        for (std::size_t g = 0; g < rewards.size(); ++g) {
            const Eigen::Index o = offsets[g];
            const auto k = static_cast<Eigen::Index>(rewards[g].size());
            s.assign(static_cast<std::size_t>(k), 0.0);
            for (Eigen::Index i = 0; i < k; ++i) {
                const double rp = (targets.col(o + i) - out.col(o + i)).squaredNorm();
                s[static_cast<std::size_t>(i)] = -config.beta * (rp - ref_resid(o + i));
            }
            ScoreLoss sl;
            switch (config.mode) {
                case LossMode::Gdro: sl = gdro_loss(s, rewards[g], config.tau); break;
                case LossMode::Rank: sl = rank_loss(s); break;
                case LossMode::Dpo: sl = dpo_loss(s[0], s[1]); break;
            }
            score_sum += sl.value;
            reg_sum += (targets.col(o) - out.col(o)).squaredNorm();
            if (d_out) {
                // ds_i/dv_theta,i = -2 beta (v_theta,i - v_i)
                for (Eigen::Index i = 0; i < k; ++i) {
                    d_out->col(o + i) += (inv_groups * sl.grad[static_cast<std::size_t>(i)] * -2.0 * config.beta) *
                                         (out.col(o + i) - targets.col(o + i));
                }
                d_out->col(o) += (inv_groups * config.gamma * 2.0) * (out.col(o) - targets.col(o));
            }
        }
        *breakdown = final_loss(score_sum * inv_groups, reg_sum * inv_groups, config.gamma);
        return breakdown->l_final;
    };
    return {std::move(closure), breakdown};
}

// ---------------------------------------------------------------------------
// Metrics CSV

std::string RunMetrics::to_csv() const {
    std::ostringstream ss;
    ss << kHeader << '\n';
    for (const auto& r : rows) {
        ss << r.step << ',' << format_double(r.l_gdro) << ',' << format_double(r.l_reg) << ','
           << format_double(r.l_final) << ',' << format_double(r.mean_eval_reward) << ','
           << format_double(r.mean_quality) << ',' << format_double(r.corrected_score) << ','
           << format_double(r.top1_fm_loss) << ',' << format_double(r.wall_clock) << '\n';
    }
    return ss.str();
}

namespace {

double parse_double_field(std::string_view field, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        throw std::invalid_argument("metrics line " + std::to_string(line) + ": bad number '" +
                                    std::string(field) + "'");
    return v;
}

}  // namespace

RunMetrics RunMetrics::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHeader)
        throw std::invalid_argument("metrics CSV: unexpected header");
    RunMetrics m;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            f.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (f.size() != 9) throw std::invalid_argument("metrics line " + std::to_string(line_no) + ": expected 9 fields");
        MetricsRow r;
        r.step = static_cast<std::int64_t>(parse_double_field(f[0], line_no));
        r.l_gdro = parse_double_field(f[1], line_no);
        r.l_reg = parse_double_field(f[2], line_no);
        r.l_final = parse_double_field(f[3], line_no);
        r.mean_eval_reward = parse_double_field(f[4], line_no);
        r.mean_quality = parse_double_field(f[5], line_no);
        r.corrected_score = parse_double_field(f[6], line_no);
        r.top1_fm_loss = parse_double_field(f[7], line_no);
        r.wall_clock = parse_double_field(f[8], line_no);
        m.rows.push_back(r);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(const TrainConfig& config, const RolloutStore& store, const ParamSet& pretrained,
                  const TrainContext& context) {
    config.validate();
    if (store.meta.reward_name != config.reward_name)
        throw std::invalid_argument("train: store reward '" + store.meta.reward_name +
                                    "' does not match configured reward '" + config.reward_name + "'");
    if (store.meta.k < config.effective_k())
        throw std::invalid_argument("train: store k " + std::to_string(store.meta.k) + " < training k " +
                                    std::to_string(config.effective_k()));
    if (store.groups.empty()) throw std::invalid_argument("train: empty rollout store");

    const int nc = context.task.num_conditions;
    const ParamSet reference = pretrained;
    ParamSet policy = pretrained;
    AdamState adam = AdamState::zeros_like(policy);
    EmaState ema{pretrained, 0};
    const AdamConfig adam_config{.lr = config.lr};

    // Fixed top-1 flow-matching probe.
    const std::size_t probe_n = std::min(context.probe_groups, store.groups.size());
    std::vector<Example> probe_examples;
    std::vector<FlowDraw> probe_draws;
    FlowConfig probe_flow;
    probe_flow.t_min = config.t_min;
    probe_flow.t_max = config.t_max;
    probe_flow.data_dim = static_cast<int>(store.groups.front().samples.front().size());
    for (std::size_t i = 0; i < probe_n; ++i) {
        KeyedRng rng({config.seed, kProbeSalt, i});
        probe_examples.push_back({store.groups[i].samples.front(), store.groups[i].condition});
        probe_draws.push_back(draw_flow(probe_flow, rng));
    }
    const LossClosure probe = probe_n > 0 ? flow_matching_closure(probe_examples, probe_draws, nc) : LossClosure{};
    auto probe_loss = [&](const ParamSet& p) { return probe_n > 0 ? loss_value(p, probe) : 0.0; };

    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };

    TrainResult result;
    auto eval_params = [&]() -> const ParamSet& { return config.ema ? ema.shadow : policy; };
    auto make_row = [&](std::int64_t step, const LossBreakdown& lb) {
        const auto ev = evaluate(eval_params(), context.eval, context.task);
        return MetricsRow{step, lb.l_gdro, lb.l_reg, lb.l_final, ev.mean_reward, ev.mean_quality,
                          ev.corrected_score, probe_loss(eval_params()), elapsed()};
    };
    auto abort = [&](const std::string& why) {
        result.policy = policy;
        result.eval_params = eval_params();
        throw TrainingAborted(why, std::move(result));
    };

    {
        // Baseline row: losses of the first batch at the initial parameters.
        const auto batch = draw_step(config, store, 1);
        const auto sl = make_step_loss(config, reference, batch, nc);
        loss_value(policy, sl.closure);
        result.metrics.rows.push_back(make_row(0, *sl.breakdown));
    }

    for (std::int64_t step = 1; step <= config.steps; ++step) {
        const auto batch = draw_step(config, store, step);
        const auto sl = make_step_loss(config, reference, batch, nc);
        ParamSet grad;
        try {
            grad = loss_gradient(policy, sl.closure);
        } catch (const NonFiniteError& e) {
            abort("non-finite loss at step " + std::to_string(step) + ": " + e.what());
        }
        auto next = adam_step(policy, grad, adam, adam_config);
        if (!next.params.all_finite()) abort("non-finite parameters at step " + std::to_string(step));
        policy = std::move(next.params);
        adam = std::move(next.state);
        if (config.ema) ema = ema_update(ema, policy);

        if (step % config.eval_interval == 0 || step == config.steps) {
            try {
                result.metrics.rows.push_back(make_row(step, *sl.breakdown));
            } catch (const SamplerError& e) {
                abort("evaluation diverged at step " + std::to_string(step) + ": " + e.what());
            }
        }
    }
    result.policy = policy;
    result.eval_params = eval_params();
    return result;
}

// ---------------------------------------------------------------------------
// Pipeline

PipelineResult run_pipeline(const ExperimentConfig& config) {
    PipelineResult out;
    const auto pc = config.pretrain_config();
    const auto data = generate_dataset(config.task, config.dataset_size, config.seed);
    out.pretrained = pretrain(pc, data);
    const auto conds = config.rollout_conditions();
    out.store = generate_rollouts(out.pretrained.params, conds,
                                  config.rollout_config("pretrain-seed" + std::to_string(config.seed)),
                                  config.task);
    out.baseline = evaluate(out.pretrained.params, config.eval, config.task);
    out.run = train(config.train, out.store, out.pretrained.params, config.train_context());
    return out;
}

}  // namespace gdro
