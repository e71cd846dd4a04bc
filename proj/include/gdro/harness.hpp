#pragma once

// Training orchestration, fixed-seed evaluation and run comparison.

#include "gdro/flow.hpp"
#include "gdro/loss.hpp"
#include "gdro/numkit.hpp"
#include "gdro/rollout.hpp"
#include "gdro/task.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gdro {

enum class LossMode { Gdro, Rank, Dpo };

LossMode parse_loss_mode(std::string_view name);
std::string loss_mode_name(LossMode mode);

struct TrainConfig {
    LossMode mode = LossMode::Gdro;
    double tau = 0.05;
    double beta = 12.0;
    double gamma = 0.5;
    int k = 6;
    double lr = 3e-4;
    int total_images_per_step = 64;
    std::int64_t steps = 300;
    std::uint64_t seed = 0;
    bool ema = true;
    std::string reward_name = "sector";
    double t_min = 0.01;
    double t_max = 0.99;
    std::int64_t eval_interval = 25;

    /// DPO mode always trains on pairs.
    int effective_k() const { return mode == LossMode::Dpo ? 2 : k; }
    /// floor(total_images_per_step / k)
    int groups_per_step() const;
    void validate() const;
};

struct EvalConfig {
    int repeats = 64;
    std::uint64_t seed = 0;
    int sampler_steps = 28;
    RewardKind reward = RewardKind::Sector;
    /// Empty means every condition of the task.
    std::vector<int> conditions;
};

struct EvalResult {
    double mean_reward = 0.0;
    double mean_quality = 0.0;
    double corrected_score = 0.0;
    Matrix samples;  // one column per (condition, repeat)
};

/// Evaluation noise is keyed by (seed, condition, repeat) only, so every
/// checkpoint is evaluated on the same noise.
Matrix eval_noise(const EvalConfig& config, const CompassTask& task, int dim);
EvalResult evaluate(const ParamSet& params, const EvalConfig& config, const CompassTask& task = {});

/// One group of a training step: a k-subset of a stored group (stored order
/// kept), a timestep shared by the group and noise per member.
struct BatchGroup {
    std::size_t store_index = 0;
    SampleGroup group;
    GroupDraw draw;
};

/// Groups for step `step` (1-based). Groups are visited in a seeded
/// per-epoch permutation; all randomness is keyed by (seed, step).
std::vector<BatchGroup> draw_step(const TrainConfig& config, const RolloutStore& store,
                                  std::int64_t step);

/// Subset of `k` member indices of a group of size `group_size`, ascending.
std::vector<std::size_t> subsample_members(std::size_t group_size, std::size_t k, KeyedRng& rng);

/// Final loss over a batch of groups as a network closure. Per-group losses
/// are averaged over the batch; the reference outputs are computed once here.
struct StepLoss {
    LossClosure closure;
    /// Filled by every evaluation of the closure head.
    std::shared_ptr<LossBreakdown> breakdown;
};

StepLoss make_step_loss(const TrainConfig& config, const ParamSet& reference,
                        std::span<const BatchGroup> batch, int num_conditions);

struct MetricsRow {
    std::int64_t step = 0;
    double l_gdro = 0.0;
    double l_reg = 0.0;
    double l_final = 0.0;
    double mean_eval_reward = 0.0;
    double mean_quality = 0.0;
    double corrected_score = 0.0;
    double top1_fm_loss = 0.0;
    double wall_clock = 0.0;
};

struct RunMetrics {
    std::vector<MetricsRow> rows;

    static constexpr const char* kHeader =
        "step,l_gdro,l_reg,l_final,mean_eval_reward,mean_quality,corrected_score,top1_fm_loss,wall_clock";
    std::string to_csv() const;
    static RunMetrics from_csv(const std::string& text);
};

struct TrainResult {
    ParamSet policy;
    /// EMA shadow when EMA is on, otherwise the raw policy.
    ParamSet eval_params;
    RunMetrics metrics;
};

class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, TrainResult partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const TrainResult& partial() const { return partial_; }

private:
    TrainResult partial_;
};

struct TrainContext {
    CompassTask task;
    EvalConfig eval;
    /// Number of stored groups whose top-1 member forms the fixed
    /// flow-matching probe reported as top1_fm_loss.
    std::size_t probe_groups = 64;
};

TrainResult train(const TrainConfig& config, const RolloutStore& store, const ParamSet& pretrained,
                  const TrainContext& context);

// ---------------------------------------------------------------------------
// Comparison

struct RunPeak {
    std::string run;
    std::int64_t peak_corrected_step = 0;
    double peak_corrected = 0.0;
    std::int64_t peak_reward_step = 0;
    double peak_reward = 0.0;
    double final_reward = 0.0;
    double final_corrected = 0.0;
};

/// Earliest row attaining the maximum wins ties.
RunPeak find_peaks(const std::string& run, const RunMetrics& metrics);

struct NamedRun {
    std::string name;
    RunMetrics metrics;
};

struct Comparison {
    std::string long_csv;   // run,step,wall_clock,metric,value
    std::string peaks_csv;  // one row per run
    std::vector<RunPeak> peaks;
};

Comparison compare_runs(std::span<const NamedRun> runs);

struct CompareOutput {
    Comparison comparison;
    std::vector<std::string> warnings;
    std::vector<std::filesystem::path> written;
};

/// Reads `<dir>/metrics.csv` for each run directory (missing ones are skipped
/// with a warning) and writes comparison.csv, peaks.csv and SVG line charts of
/// reward and corrected score against steps and wall-clock into `out_dir`.
CompareOutput compare(std::span<const std::filesystem::path> run_dirs, const std::filesystem::path& out_dir);

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

std::string render_line_chart_svg(const std::string& title, const std::string& x_label,
                                  const std::string& y_label, std::span<const Series> series);

// ---------------------------------------------------------------------------
// Experiment configuration: `key = value` lines, `#` comments. Keys are
// section-qualified (task.*, model.*, pretrain.*, rollout.*, train.*, eval.*).

struct ExperimentConfig {
    std::uint64_t seed = 0;
    CompassTask task;
    ModelConfig model;
    FlowConfig flow;
    std::size_t dataset_size = 8192;
    std::int64_t pretrain_steps = 3000;
    int pretrain_batch = 256;
    double pretrain_lr = 2e-3;
    int rollout_k = 16;
    int rollout_groups_per_condition = 64;
    RewardKind rollout_reward = RewardKind::Sector;
    TrainConfig train;
    EvalConfig eval;
    std::size_t probe_groups = 64;

    PretrainConfig pretrain_config() const;
    RolloutConfig rollout_config(std::string checkpoint_id) const;
    std::vector<int> rollout_conditions() const;
    TrainContext train_context() const;
    /// Pushes the top-level seed into every stage.
    void set_seed(std::uint64_t value);
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
/// Throws ConfigError on unknown keys or malformed values.
void apply_key_values(ExperimentConfig& config, const KeyValues& values);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string to_key_values(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// End-to-end pipeline, as run by the CLI and the acceptance suite.

struct PipelineResult {
    PretrainResult pretrained;
    RolloutStore store;
    EvalResult baseline;
    TrainResult run;
};

PipelineResult run_pipeline(const ExperimentConfig& config);

/// Command-line entry point; returns the process exit status.
int run_cli(const std::vector<std::string>& args);

}  // namespace gdro
