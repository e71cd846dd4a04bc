#include "gdro/harness.hpp"

#include "gdro/io.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace gdro {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size())
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "on" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "off" || value == "0" || value == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

/// Keeps the per-stage copies of shared settings in agreement.
void sync(ExperimentConfig& c) {
    c.train.t_min = c.flow.t_min;
    c.train.t_max = c.flow.t_max;
    c.train.reward_name = reward_name(c.rollout_reward);
    c.eval.sampler_steps = c.flow.total_timesteps;
    c.model.num_conditions = c.task.num_conditions;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"seed", [](auto& c, auto& k, auto& v) { c.set_seed(parse_number<std::uint64_t>(k, v)); }},
        {"task.num_conditions", [](auto& c, auto& k, auto& v) { c.task.num_conditions = parse_number<int>(k, v); }},
        {"task.mode_std", [](auto& c, auto& k, auto& v) { c.task.mode_std = parse_number<double>(k, v); }},
        {"task.correct_mode_prob", [](auto& c, auto& k, auto& v) { c.task.correct_mode_prob = parse_number<double>(k, v); }},
        {"model.hidden_width", [](auto& c, auto& k, auto& v) { c.model.hidden_width = parse_number<int>(k, v); }},
        {"model.hidden_layers", [](auto& c, auto& k, auto& v) { c.model.hidden_layers = parse_number<int>(k, v); }},
        {"flow.t_min", [](auto& c, auto& k, auto& v) { c.flow.t_min = parse_number<double>(k, v); }},
        {"flow.t_max", [](auto& c, auto& k, auto& v) { c.flow.t_max = parse_number<double>(k, v); }},
        {"flow.sampler_steps", [](auto& c, auto& k, auto& v) { c.flow.total_timesteps = parse_number<int>(k, v); }},
        {"pretrain.dataset_size", [](auto& c, auto& k, auto& v) { c.dataset_size = parse_number<std::size_t>(k, v); }},
        {"pretrain.steps", [](auto& c, auto& k, auto& v) { c.pretrain_steps = parse_number<std::int64_t>(k, v); }},
        {"pretrain.batch_size", [](auto& c, auto& k, auto& v) { c.pretrain_batch = parse_number<int>(k, v); }},
        {"pretrain.lr", [](auto& c, auto& k, auto& v) { c.pretrain_lr = parse_number<double>(k, v); }},
        {"rollout.k", [](auto& c, auto& k, auto& v) { c.rollout_k = parse_number<int>(k, v); }},
        {"rollout.groups_per_condition", [](auto& c, auto& k, auto& v) { c.rollout_groups_per_condition = parse_number<int>(k, v); }},
        {"rollout.reward", [](auto& c, auto&, auto& v) { c.rollout_reward = parse_reward_name(v); }},
        {"train.mode", [](auto& c, auto&, auto& v) { c.train.mode = parse_loss_mode(v); }},
        {"train.tau", [](auto& c, auto& k, auto& v) { c.train.tau = parse_number<double>(k, v); }},
        {"train.beta", [](auto& c, auto& k, auto& v) { c.train.beta = parse_number<double>(k, v); }},
        {"train.gamma", [](auto& c, auto& k, auto& v) { c.train.gamma = parse_number<double>(k, v); }},
        {"train.k", [](auto& c, auto& k, auto& v) { c.train.k = parse_number<int>(k, v); }},
        {"train.lr", [](auto& c, auto& k, auto& v) { c.train.lr = parse_number<double>(k, v); }},
        {"train.total_images_per_step", [](auto& c, auto& k, auto& v) { c.train.total_images_per_step = parse_number<int>(k, v); }},
        {"train.steps", [](auto& c, auto& k, auto& v) { c.train.steps = parse_number<std::int64_t>(k, v); }},
        {"train.ema", [](auto& c, auto& k, auto& v) { c.train.ema = parse_bool(k, v); }},
        {"train.eval_interval", [](auto& c, auto& k, auto& v) { c.train.eval_interval = parse_number<std::int64_t>(k, v); }},
        {"eval.repeats", [](auto& c, auto& k, auto& v) { c.eval.repeats = parse_number<int>(k, v); }},
        {"eval.reward", [](auto& c, auto&, auto& v) { c.eval.reward = parse_reward_name(v); }},
        {"eval.probe_groups", [](auto& c, auto& k, auto& v) { c.probe_groups = parse_number<std::size_t>(k, v); }},
    };
    return table;
}

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t value) {
    seed = value;
    train.seed = value;
    eval.seed = value;
}

PretrainConfig ExperimentConfig::pretrain_config() const {
    PretrainConfig pc;
    pc.model = model;
    pc.model.num_conditions = task.num_conditions;
    pc.flow = flow;
    pc.task = task;
    pc.dataset_size = dataset_size;
    pc.steps = pretrain_steps;
    pc.batch_size = pretrain_batch;
    pc.lr = pretrain_lr;
    pc.seed = seed;
    return pc;
}

RolloutConfig ExperimentConfig::rollout_config(std::string checkpoint_id) const {
    return {rollout_k, flow.total_timesteps, rollout_reward, seed, std::move(checkpoint_id)};
}

std::vector<int> ExperimentConfig::rollout_conditions() const {
    std::vector<int> conds;
    for (int g = 0; g < rollout_groups_per_condition; ++g)
        for (int c = 0; c < task.num_conditions; ++c) conds.push_back(c);
    return conds;
}

TrainContext ExperimentConfig::train_context() const {
    return {task, eval, probe_groups};
}

KeyValues parse_key_values(const std::string& text) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        std::string key = trim(std::string_view(stripped).substr(0, eq));
        std::string value = trim(std::string_view(stripped).substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        out[std::move(key)] = std::move(value);
    }
    return out;
}

void apply_key_values(ExperimentConfig& config, const KeyValues& values) {
    const auto& table = setters();
    // seed first so explicit per-stage keys are not clobbered by it
    if (auto it = values.find("seed"); it != values.end()) table.at("seed")(config, it->first, it->second);
    for (const auto& [key, value] : values) {
        if (key == "seed") continue;
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
        try {
            it->second(config, key, value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    }
    sync(config);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    ExperimentConfig config;
    apply_key_values(config, parse_key_values(read_file(path)));
    return config;
}

std::string to_key_values(const ExperimentConfig& c) {
    std::ostringstream ss;
    ss << "seed = " << c.seed << '\n'
       << "task.num_conditions = " << c.task.num_conditions << '\n'
       << "task.mode_std = " << format_double(c.task.mode_std) << '\n'
       << "task.correct_mode_prob = " << format_double(c.task.correct_mode_prob) << '\n'
       << "model.hidden_width = " << c.model.hidden_width << '\n'
       << "model.hidden_layers = " << c.model.hidden_layers << '\n'
       << "flow.t_min = " << format_double(c.flow.t_min) << '\n'
       << "flow.t_max = " << format_double(c.flow.t_max) << '\n'
       << "flow.sampler_steps = " << c.flow.total_timesteps << '\n'
       << "pretrain.dataset_size = " << c.dataset_size << '\n'
       << "pretrain.steps = " << c.pretrain_steps << '\n'
       << "pretrain.batch_size = " << c.pretrain_batch << '\n'
       << "pretrain.lr = " << format_double(c.pretrain_lr) << '\n'
       << "rollout.k = " << c.rollout_k << '\n'
       << "rollout.groups_per_condition = " << c.rollout_groups_per_condition << '\n'
       << "rollout.reward = " << reward_name(c.rollout_reward) << '\n'
       << "train.mode = " << loss_mode_name(c.train.mode) << '\n'
       << "train.tau = " << format_double(c.train.tau) << '\n'
       << "train.beta = " << format_double(c.train.beta) << '\n'
       << "train.gamma = " << format_double(c.train.gamma) << '\n'
       << "train.k = " << c.train.k << '\n'
       << "train.lr = " << format_double(c.train.lr) << '\n'
       << "train.total_images_per_step = " << c.train.total_images_per_step << '\n'
       << "train.steps = " << c.train.steps << '\n'
       << "train.ema = " << (c.train.ema ? "true" : "false") << '\n'
       << "train.eval_interval = " << c.train.eval_interval << '\n'
       << "eval.repeats = " << c.eval.repeats << '\n'
       << "eval.reward = " << reward_name(c.eval.reward) << '\n'
       << "eval.probe_groups = " << c.probe_groups << '\n';
    return ss.str();
}

}  // namespace gdro
