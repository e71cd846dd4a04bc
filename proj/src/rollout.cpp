#include "gdro/rollout.hpp"

#include "gdro/flow.hpp"
#include "gdro/io.hpp"
#include "gdro/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <sstream>

namespace gdro {

using nlohmann::json;

std::vector<std::size_t> descending_order(std::span<const double> rewards) {
    std::vector<std::size_t> order(rewards.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rewards[a] > rewards[b]; });
    return order;
}

SampleGroup sort_group(std::vector<Vector> samples, std::vector<double> rewards, int condition,
                       std::uint64_t seed, std::string reward_name) {
    if (samples.size() != rewards.size())
        throw std::invalid_argument("sort_group: " + std::to_string(samples.size()) + " samples but " +
                                    std::to_string(rewards.size()) + " rewards");
    if (rewards.size() < 2) throw std::invalid_argument("sort_group: a group needs at least 2 members");
    const auto order = descending_order(rewards);
    SampleGroup g{condition, {}, {}, seed, std::move(reward_name)};
    g.samples.reserve(order.size());
    g.rewards.reserve(order.size());
    for (std::size_t i : order) {
        g.samples.push_back(std::move(samples[i]));
        g.rewards.push_back(rewards[i]);
    }
    return g;
}

Vector rollout_noise(std::uint64_t seed, std::size_t group_index, std::size_t sample_index, int dim) {
    KeyedRng rng({seed, 0x0110u, group_index, sample_index});
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
    return v;
}

RolloutStore generate_rollouts(const ParamSet& params, std::span<const int> conditions,
                               const RolloutConfig& config, const CompassTask& task) {
    if (config.k < 2) throw std::invalid_argument("generate_rollouts: k must be at least 2");
    const int dim = params.output_dim();
    const std::string name = reward_name(config.reward);

    RolloutStore store;
    store.meta = {config.checkpoint_id, config.k, name, config.seed};
    store.groups.resize(conditions.size());

    const auto k = static_cast<std::size_t>(config.k);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(conditions.size()); ++gi) {
        const auto g = static_cast<std::size_t>(gi);
        const int c = conditions[g];
        Matrix noise(dim, config.k);
        for (std::size_t j = 0; j < k; ++j)
            noise.col(static_cast<Eigen::Index>(j)) = rollout_noise(config.seed, g, j, dim);
        const std::vector<int> conds(k, c);
        const Matrix x = euler_sample_batch(params, conds, noise, config.steps, task.num_conditions);

        std::vector<Vector> samples;
        std::vector<double> rewards;
        for (std::size_t j = 0; j < k; ++j) {
            samples.emplace_back(x.col(static_cast<Eigen::Index>(j)));
            rewards.push_back(reward(config.reward, samples.back(), c, task));
        }
        store.groups[g] = sort_group(std::move(samples), std::move(rewards), c,
                                     mix_key({config.seed, g}), name);
    }
    return store;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json header_json(const RolloutStore& store) {
    json h;
    h["format"] = "gdro-rollouts";
    h["version"] = 1;
    h["checkpoint_id"] = store.meta.checkpoint_id;
    h["k"] = store.meta.k;
    h["reward_name"] = store.meta.reward_name;
    h["seed"] = store.meta.seed;
    h["num_groups"] = store.groups.size();
    return h;
}

void check_finite(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("rollout store holds a non-finite value");
}

json group_json(const SampleGroup& g) {
    json samples = json::array();
    for (const auto& s : g.samples) {
        json row = json::array();
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            check_finite(s(i));
            row.push_back(s(i));
        }
        samples.push_back(std::move(row));
    }
    for (double r : g.rewards) check_finite(r);
    json j;
    j["c"] = g.condition;
    j["seed"] = g.seed;
    j["reward_name"] = g.reward_name;
    j["samples"] = std::move(samples);
    j["rewards"] = g.rewards;
    return j;
}

SampleGroup parse_group(const json& j, std::size_t line) {
    try {
        SampleGroup g;
        g.condition = j.at("c").get<int>();
        g.seed = j.at("seed").get<std::uint64_t>();
        g.reward_name = j.at("reward_name").get<std::string>();
        for (const auto& row : j.at("samples")) {
            Vector s(static_cast<Eigen::Index>(row.size()));
            for (std::size_t i = 0; i < row.size(); ++i) s(static_cast<Eigen::Index>(i)) = row[i].get<double>();
            g.samples.push_back(std::move(s));
        }
        g.rewards = j.at("rewards").get<std::vector<double>>();
        if (g.samples.size() != g.rewards.size())
            throw StoreFormatError("samples and rewards differ in length", line);
        if (!std::is_sorted(g.rewards.begin(), g.rewards.end(), std::greater<>()))
            throw StoreFormatError("rewards are not in descending order", line);
        return g;
    } catch (const json::exception& e) {
        throw StoreFormatError(std::string("malformed group: ") + e.what(), line);
    }
}

}  // namespace

std::string serialize_store(const RolloutStore& store) {
    std::string out = header_json(store).dump();
    out += '\n';
    for (const auto& g : store.groups) {
        if (static_cast<int>(g.k()) != store.meta.k)
            throw std::invalid_argument("serialize_store: group size differs from store k");
        out += group_json(g).dump();
        out += '\n';
    }
    return out;
}

RolloutStore parse_store(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    RolloutStore store;
    std::size_t expected_groups = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw StoreFormatError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        if (!have_header) {
            try {
                if (j.at("format").get<std::string>() != "gdro-rollouts")
                    throw StoreFormatError("not a rollout store header", line_no);
                store.meta.checkpoint_id = j.at("checkpoint_id").get<std::string>();
                store.meta.k = j.at("k").get<int>();
                store.meta.reward_name = j.at("reward_name").get<std::string>();
                store.meta.seed = j.at("seed").get<std::uint64_t>();
                expected_groups = j.at("num_groups").get<std::size_t>();
            } catch (const json::exception& e) {
                throw StoreFormatError(std::string("malformed header: ") + e.what(), line_no);
            }
            have_header = true;
            continue;
        }
        SampleGroup g = parse_group(j, line_no);
        if (static_cast<int>(g.k()) != store.meta.k)
            throw StoreFormatError("group size " + std::to_string(g.k()) + " != store k " +
                                       std::to_string(store.meta.k), line_no);
        if (g.reward_name != store.meta.reward_name)
            throw StoreFormatError("group reward '" + g.reward_name + "' != store reward '" +
                                       store.meta.reward_name + "'", line_no);
        store.groups.push_back(std::move(g));
    }
    if (!have_header) throw StoreFormatError("missing header", line_no);
    if (store.groups.size() != expected_groups)
        throw StoreFormatError("header announces " + std::to_string(expected_groups) + " groups, found " +
                                   std::to_string(store.groups.size()), line_no);
    return store;
}

void save_store(const RolloutStore& store, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_store(store));
}

RolloutStore load_store(const std::filesystem::path& path) {
    return parse_store(read_file(path));
}

}  // namespace gdro
