#pragma once

// Offline rollouts: groups of k samples per condition with their explicit
// rewards, kept in descending-reward order and persisted as JSON Lines.

#include "gdro/numkit.hpp"
#include "gdro/task.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gdro {

struct SampleGroup {
    int condition = 0;
    std::vector<Vector> samples;
    std::vector<double> rewards;  // descending; ties keep generation order
    std::uint64_t seed = 0;
    std::string reward_name;

    std::size_t k() const { return rewards.size(); }
    bool operator==(const SampleGroup&) const = default;
};

/// Stable descending order of `rewards` (indices into the input).
std::vector<std::size_t> descending_order(std::span<const double> rewards);

/// Sorts samples and rewards jointly, descending by reward, stable on ties.
SampleGroup sort_group(std::vector<Vector> samples, std::vector<double> rewards, int condition = 0,
                       std::uint64_t seed = 0, std::string reward_name = {});

struct RolloutMetadata {
    std::string checkpoint_id;
    int k = 0;
    std::string reward_name;
    std::uint64_t seed = 0;
    bool operator==(const RolloutMetadata&) const = default;
};

struct RolloutStore {
    RolloutMetadata meta;
    std::vector<SampleGroup> groups;
    bool operator==(const RolloutStore&) const = default;
};

struct RolloutConfig {
    int k = 16;
    int steps = 28;
    RewardKind reward = RewardKind::Sector;
    std::uint64_t seed = 0;
    std::string checkpoint_id;
};

/// Noise for sample j of group g is keyed by (seed, g, j) alone.
Vector rollout_noise(std::uint64_t seed, std::size_t group_index, std::size_t sample_index, int dim);

/// One group per entry of `conditions`. Groups are generated independently
/// and may run in parallel; the result does not depend on scheduling.
RolloutStore generate_rollouts(const ParamSet& params, std::span<const int> conditions,
                               const RolloutConfig& config, const CompassTask& task = {});

class StoreFormatError : public std::runtime_error {
public:
    StoreFormatError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// File layout: a header line
//   {"format":"gdro-rollouts","version":1,"checkpoint_id":str,"k":int,
//    "reward_name":str,"seed":int,"num_groups":int}
// followed by one group per line
//   {"c":int,"seed":int,"reward_name":str,"samples":[[f64,...],...],"rewards":[f64,...]}
// Doubles use shortest round-trip decimal text.
std::string serialize_store(const RolloutStore& store);
RolloutStore parse_store(const std::string& text);
void save_store(const RolloutStore& store, const std::filesystem::path& path);
RolloutStore load_store(const std::filesystem::path& path);

}  // namespace gdro
