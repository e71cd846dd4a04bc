#include "gdro/harness.hpp"

#include "gdro/io.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <limits>
#include <optional>

namespace gdro {

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "Experiment config file (key = value lines)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "Seed for every stage");
    cmd->add_option("--set", args.overrides, "Override a config key, e.g. --set train.tau=0.1");
}

ExperimentConfig build_config(const CommonArgs& args, KeyValues extra = {}) {
    ExperimentConfig config;
    KeyValues values;
    if (!args.config.empty()) values = parse_key_values(read_file(args.config));
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        values[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    for (auto& [k, v] : extra) values[k] = v;
    if (args.seed) values["seed"] = std::to_string(*args.seed);
    apply_key_values(config, values);
    return config;
}

template <typename T>
void put_flag(KeyValues& kv, const char* key, const std::optional<T>& value) {
    if (!value) return;
    if constexpr (std::is_same_v<T, double>) {
        kv[key] = format_double(*value);
    } else if constexpr (std::is_same_v<T, std::string>) {
        kv[key] = *value;
    } else {
        kv[key] = std::to_string(*value);
    }
}

void write_train_outputs(const fs::path& dir, const ExperimentConfig& config, const TrainResult& result) {
    write_file_atomic(dir / "metrics.csv", result.metrics.to_csv());
    save_checkpoint(dir / "policy.bin", result.policy, config.seed);
    save_checkpoint(dir / "eval.bin", result.eval_params, config.seed);
    write_file_atomic(dir / "config.cfg", to_key_values(config));
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Group-level direct reward optimization on a desk-scale rectified flow task", "gdro"};
    app.require_subcommand(1);

    // pretrain
    CommonArgs pre_args;
    std::string pre_out;
    std::string pre_log;
    auto* pre = app.add_subcommand("pretrain", "Flow-matching pretraining of the reference model");
    add_common(pre, pre_args);
    pre->add_option("--out", pre_out, "Checkpoint path")->required();
    pre->add_option("--log", pre_log, "Loss CSV path (default: <out>.loss.csv)");

    // rollout
    CommonArgs ro_args;
    std::string ro_ckpt;
    std::string ro_out;
    std::optional<int> ro_k;
    std::optional<std::string> ro_reward;
    std::optional<int> ro_groups;
    auto* ro = app.add_subcommand("rollout", "Pre-generate rewarded sample groups for offline training");
    add_common(ro, ro_args);
    ro->add_option("--checkpoint", ro_ckpt, "Generator checkpoint")->required()->check(CLI::ExistingFile);
    ro->add_option("--k", ro_k, "Samples per group");
    ro->add_option("--reward", ro_reward, "sector|hackable")->check(CLI::IsMember({"sector", "hackable"}));
    ro->add_option("--groups-per-condition", ro_groups, "Groups generated per condition");
    ro->add_option("--out", ro_out, "Rollout store (JSONL)")->required();

    // train
    CommonArgs tr_args;
    std::string tr_store;
    std::string tr_ckpt;
    std::string tr_out;
    std::optional<std::string> tr_mode;
    std::optional<double> tr_tau, tr_beta, tr_gamma, tr_lr;
    std::optional<int> tr_k, tr_images;
    std::optional<std::int64_t> tr_steps, tr_interval;
    std::optional<std::string> tr_ema;
    auto* tr = app.add_subcommand("train", "Offline post-training against a rollout store");
    add_common(tr, tr_args);
    tr->add_option("--store", tr_store, "Rollout store (JSONL)")->required()->check(CLI::ExistingFile);
    tr->add_option("--checkpoint", tr_ckpt, "Pretrained (reference) checkpoint")->required()->check(CLI::ExistingFile);
    tr->add_option("--out-dir", tr_out, "Run directory")->required();
    tr->add_option("--mode", tr_mode, "gdro|rank|dpo")->check(CLI::IsMember({"gdro", "rank", "dpo"}));
    tr->add_option("--tau", tr_tau, "Reward softmax temperature");
    tr->add_option("--beta", tr_beta, "Implicit reward scale");
    tr->add_option("--gamma", tr_gamma, "Top-1 regularizer strength");
    tr->add_option("--k", tr_k, "Group size");
    tr->add_option("--lr", tr_lr, "Adam learning rate");
    tr->add_option("--steps", tr_steps, "Optimization steps");
    tr->add_option("--images-per-step", tr_images, "Total images per step (groups = floor(images / k))");
    tr->add_option("--eval-interval", tr_interval, "Steps between metric rows");
    tr->add_option("--ema", tr_ema, "on|off")->check(CLI::IsMember({"on", "off"}));

    // eval
    CommonArgs ev_args;
    std::string ev_ckpt;
    std::string ev_out;
    std::optional<std::string> ev_reward;
    std::optional<int> ev_repeats;
    auto* ev = app.add_subcommand("eval", "Fixed-seed evaluation of a checkpoint");
    add_common(ev, ev_args);
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
    ev->add_option("--reward", ev_reward, "sector|hackable")->check(CLI::IsMember({"sector", "hackable"}));
    ev->add_option("--repeats", ev_repeats, "Samples per condition");
    ev->add_option("--out", ev_out, "Write the metrics row as CSV");

    // compare
    std::vector<std::string> cmp_runs;
    std::string cmp_out;
    auto* cmp = app.add_subcommand("compare", "Merge run metrics, report peaks and plot curves");
    cmp->add_option("runs", cmp_runs, "Run directories containing metrics.csv")->required();
    cmp->add_option("--out", cmp_out, "Output directory")->required();

    std::vector<const char*> argv;
    argv.push_back("gdro");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (pre->parsed()) {
            const auto config = build_config(pre_args);
            const auto pc = config.pretrain_config();
            pc.flow.validate();
            const auto data = generate_dataset(config.task, config.dataset_size, config.seed);
            const fs::path out = resolve_output_path(pre_out);
            const fs::path log = pre_log.empty() ? fs::path(out.string() + ".loss.csv") : resolve_output_path(pre_log);
            try {
                const auto result = pretrain(pc, data);
                save_checkpoint(out, result.params, config.seed);
                write_file_atomic(log, loss_log_csv(result.losses));
                std::cout << "pretrain: " << result.losses.size() << " steps, final loss "
                          << (result.losses.empty() ? 0.0 : result.losses.back().loss) << " -> " << out.string() << '\n';
            } catch (const TrainingDiverged& e) {
                save_checkpoint(out, e.last_good(), config.seed);
                std::cerr << "error: " << e.what() << " (last good checkpoint saved to " << out.string() << ")\n";
                return kRuntimeError;
            }
        } else if (ro->parsed()) {
            KeyValues extra;
            put_flag(extra, "rollout.k", ro_k);
            put_flag(extra, "rollout.reward", ro_reward);
            put_flag(extra, "rollout.groups_per_condition", ro_groups);
            const auto config = build_config(ro_args, extra);
            if (config.rollout_k < 2) throw std::invalid_argument("rollout: k must be at least 2");
            const auto ck = load_checkpoint(ro_ckpt);
            const auto store = generate_rollouts(ck.params, config.rollout_conditions(),
                                                 config.rollout_config(fs::path(ro_ckpt).filename().string()),
                                                 config.task);
            const fs::path out = resolve_output_path(ro_out);
            save_store(store, out);
            std::cout << "rollout: " << store.groups.size() << " groups of " << store.meta.k << " ("
                      << store.meta.reward_name << ") -> " << out.string() << '\n';
        } else if (tr->parsed()) {
            KeyValues extra;
            put_flag(extra, "train.mode", tr_mode);
            put_flag(extra, "train.tau", tr_tau);
            put_flag(extra, "train.beta", tr_beta);
            put_flag(extra, "train.gamma", tr_gamma);
            put_flag(extra, "train.k", tr_k);
            put_flag(extra, "train.lr", tr_lr);
            put_flag(extra, "train.steps", tr_steps);
            put_flag(extra, "train.total_images_per_step", tr_images);
            put_flag(extra, "train.eval_interval", tr_interval);
            put_flag(extra, "train.ema", tr_ema);
            auto config = build_config(tr_args, extra);
            config.train.validate();
            const auto store = load_store(tr_store);
            config.rollout_reward = parse_reward_name(store.meta.reward_name);
            config.train.reward_name = store.meta.reward_name;
            const auto ck = load_checkpoint(tr_ckpt);
            const fs::path dir = resolve_output_path(tr_out);
            try {
                const auto result = train(config.train, store, ck.params, config.train_context());
                write_train_outputs(dir, config, result);
                const auto& last = result.metrics.rows.back();
                std::cout << "train: " << config.train.steps << " steps, reward " << last.mean_eval_reward
                          << ", corrected " << last.corrected_score << " -> " << dir.string() << '\n';
            } catch (const TrainingAborted& e) {
                write_train_outputs(dir, config, e.partial());
                std::cerr << "error: " << e.what() << " (partial run saved to " << dir.string() << ")\n";
                return kRuntimeError;
            }
        } else if (ev->parsed()) {
            KeyValues extra;
            put_flag(extra, "eval.reward", ev_reward);
            put_flag(extra, "eval.repeats", ev_repeats);
            const auto config = build_config(ev_args, extra);
            const auto ck = load_checkpoint(ev_ckpt);
            const auto res = evaluate(ck.params, config.eval, config.task);
            const double nan = std::numeric_limits<double>::quiet_NaN();
            RunMetrics m;
            m.rows.push_back({0, nan, nan, nan, res.mean_reward, res.mean_quality, res.corrected_score, nan, 0.0});
            if (!ev_out.empty()) write_file_atomic(resolve_output_path(ev_out), m.to_csv());
            std::cout << "reward=" << format_double(res.mean_reward) << " quality=" << format_double(res.mean_quality)
                      << " corrected=" << format_double(res.corrected_score) << '\n';
        } else if (cmp->parsed()) {
            std::vector<fs::path> dirs(cmp_runs.begin(), cmp_runs.end());
            const auto out = compare(dirs, resolve_output_path(cmp_out));
            for (const auto& w : out.warnings) std::cerr << "warning: " << w << '\n';
            for (const auto& p : out.comparison.peaks) {
                std::cout << p.run << ": peak corrected " << p.peak_corrected << " at step " << p.peak_corrected_step
                          << ", peak reward " << p.peak_reward << " at step " << p.peak_reward_step << '\n';
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return 0;
}

}  // namespace gdro
