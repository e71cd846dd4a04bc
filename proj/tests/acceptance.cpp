// Acceptance suite: one PASS/FAIL line per criterion.
//
//   gdro_acceptance [--only N[,N...]] [--expect-fail N[,N...]]
//
// Exit status is 0 when every criterion passes, except those listed in
// --expect-fail, which are required to fail (a listed criterion that starts
// passing is reported so its pin can be revisited).
#include "support.hpp"

#include "gdro/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>

using namespace gdro;
using namespace gdro::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

ExperimentConfig shipped(const char* name) {
    return load_experiment_config(fs::path(GDRO_SOURCE_DIR) / "configs" / name);
}

// Pipeline runs are shared between criteria 7-10.
struct Runs {
    std::optional<PipelineResult> first;
    std::optional<PipelineResult> second;
    double first_seconds = 0.0;
};

Runs& runs() {
    static Runs r;
    return r;
}

const PipelineResult& default_run() {
    auto& r = runs();
    if (!r.first) {
        const auto t0 = std::chrono::steady_clock::now();
        r.first = run_pipeline(shipped("default.cfg"));
        r.first_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    return *r.first;
}

// ---------------------------------------------------------------------------

Outcome corrected_score_reproduction() {
    const double ocr[] = {3.2572, 3.7617, 3.2577};
    const double geneval[] = {3.6191, 3.2376};
    const double a = corrected_score(0.5843, ocr, ScoreKind::OcrLike);
    const double b = corrected_score(0.6178, geneval, ScoreKind::GenevalLike);
    return {std::abs(a - 0.4486) <= 0.005 && std::abs(b - 0.4646) <= 0.005,
            fmt("ocr-like %.4f (0.4486), geneval-like %.4f (0.4646), tol 0.005", a, b)};
}

Outcome reduction_identities() {
    KeyedRng rng(101);
    double worst_rank = 0.0, worst_dpo = 0.0;
    int pairs = 0;
    for (int trial = 0; trial < 1200; ++trial) {
        const std::size_t k = trial < 300 ? 2 : 2 + rng.below(9);
        const auto s = random_scores(k, rng, 3.0);
        const auto r = descending_rewards(k, rng);
        const double g = gdro_loss(s, r, 1e-8).value;
        worst_rank = std::max(worst_rank, std::abs(g - rank_loss(s).value));
        if (k == 2) {
            worst_dpo = std::max(worst_dpo, std::abs(g - dpo_loss(s[0], s[1]).value));
            ++pairs;
        }
    }
    return {worst_rank < 1e-6 && worst_dpo < 1e-6,
            fmt("1200 instances (%d with k=2): max |gdro-rank| %.2e, max |gdro-dpo| %.2e, tol 1e-6", pairs,
                worst_rank, worst_dpo)};
}

Outcome shift_invariance() {
    KeyedRng rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 2 + rng.below(9);
        const auto s = random_scores(k, rng, 3.0);
        const auto r = descending_rewards(k, rng);
        const double tau = rng.uniform(0.01, 1.0);
        const double base = gdro_loss(s, r, tau).value;
        for (double c : {-1000.0, -1.0, 1.0, 1000.0}) {
            auto shifted = s;
            for (double& v : shifted) v += c;
            worst = std::max(worst, std::abs(gdro_loss(shifted, r, tau).value - base));
        }
    }
    return {worst < 1e-9, fmt("1000 instances x C in {+-1, +-1e3}: max deviation %.2e, tol 1e-9", worst)};
}

Outcome pl_normalization() {
    KeyedRng rng(303);
    double worst_sum = 0.0, worst_rank = 0.0;
    for (std::size_t k = 2; k <= 5; ++k) {
        for (int trial = 0; trial < 20; ++trial) {
            const auto s = random_scores(k, rng, 2.0);
            std::vector<std::size_t> perm(k);
            std::iota(perm.begin(), perm.end(), 0);
            const double nll_identity = -std::log(pl_likelihood(s, perm));
            worst_rank = std::max(worst_rank, std::abs(nll_identity - rank_loss(s).value));
            double total = 0.0;
            do total += pl_likelihood(s, perm);
            while (std::next_permutation(perm.begin(), perm.end()));
            worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        }
    }
    return {worst_sum <= 1e-9 && worst_rank <= 1e-12,
            fmt("k=2..5, 20 score vectors each: max |sum-1| %.2e (tol 1e-9), max |-log PL(id) - rank| %.2e (rounding, "
                "tol 1e-12)",
                worst_sum, worst_rank)};
}

Outcome gradient_checks() {
    constexpr int kNc = 3;
    constexpr int kInstances = 20;
    KeyedRng rng(404);
    double worst[5] = {0, 0, 0, 0, 0};
    const char* names[5] = {"flow-matching", "dpo", "rank", "gdro", "final"};
    for (int trial = 0; trial < kInstances; ++trial) {
        const auto reference = random_net(small_widths(kNc, 8), 500 + static_cast<std::uint64_t>(trial));
        const auto policy = jitter(reference, 600 + static_cast<std::uint64_t>(trial), 0.05);
        const std::size_t k = 3 + rng.below(5);
        const auto g = random_group(k, trial % kNc, rng);
        const auto d = random_draw(k, rng);
        const auto r = g.rewards;

        std::vector<Example> batch;
        std::vector<FlowDraw> draws;
        for (std::size_t i = 0; i < k; ++i) {
            batch.push_back({g.samples[i], g.condition});
            draws.push_back({d.t, d.eps[i]});
        }
        const auto pair = sort_group({g.samples[0], g.samples[k - 1]}, {r[0], r[k - 1]}, g.condition);
        const GroupDraw pair_draw{d.t, {d.eps[0], d.eps[k - 1]}};

        const LossClosure closures[5] = {
            flow_matching_closure(batch, draws, kNc),
            score_closure(reference, pair, pair_draw, 12.0, 0.0, kNc, [](const auto& s) { return dpo_loss(s[0], s[1]); }),
            score_closure(reference, g, d, 12.0, 0.0, kNc, [](const auto& s) { return rank_loss(s); }),
            score_closure(reference, g, d, 12.0, 0.0, kNc, [&](const auto& s) { return gdro_loss(s, r, 0.05); }),
            score_closure(reference, g, d, 12.0, 0.5, kNc, [&](const auto& s) { return gdro_loss(s, r, 0.05); }),
        };
        for (int l = 0; l < 5; ++l) worst[l] = std::max(worst[l], finite_diff_check(policy, closures[l]));
    }
    bool pass = true;
    std::ostringstream ss;
    ss << kInstances << " instances each, all coordinates, h=1e-5:";
    for (int l = 0; l < 5; ++l) {
        pass = pass && worst[l] < 1e-4;
        ss << ' ' << names[l] << ' ' << fmt("%.1e", worst[l]);
    }
    ss << " (tol 1e-4)";
    return {pass, ss.str()};
}

Outcome flow_correctness() {
    KeyedRng rng(505);
    int endpoint_failures = 0;
    for (int i = 0; i < 10000; ++i) {
        Vector x0(2), eps(2);
        x0 << rng.normal(), rng.normal();
        eps << rng.normal(), rng.normal();
        if (perturb(x0, eps, 0.0).x_t != x0 || perturb(x0, eps, 1.0).x_t != eps) ++endpoint_failures;
    }
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        Vector x0(2), eps(2);
        x0 << rng.normal(), rng.normal();
        eps << rng.normal(), rng.normal();
        const VelocityField planted = [&](const Vector&, double, int) { return Vector(eps - x0); };
        for (int steps : {1, 7, 28}) worst = std::max(worst, (euler_sample(planted, 0, eps, steps) - x0).norm());
    }
    return {endpoint_failures == 0 && worst < 1e-12,
            fmt("10000 endpoint pairs, %d failures; planted-field reconstruction max error %.2e over steps {1,7,28} "
                "(tol 1e-12)",
                endpoint_failures, worst)};
}

bool same_rows(const RunMetrics& a, const RunMetrics& b) {
    if (a.rows.size() != b.rows.size()) return false;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        const auto& x = a.rows[i];
        const auto& y = b.rows[i];
        // wall_clock is a measurement, not a result
        if (x.step != y.step || x.l_gdro != y.l_gdro || x.l_reg != y.l_reg || x.l_final != y.l_final ||
            x.mean_eval_reward != y.mean_eval_reward || x.mean_quality != y.mean_quality ||
            x.corrected_score != y.corrected_score || x.top1_fm_loss != y.top1_fm_loss)
            return false;
    }
    return true;
}

Outcome determinism_and_persistence() {
    const auto& a = default_run();
    auto& r = runs();
    r.second = run_pipeline(shipped("default.cfg"));
    const auto& b = *r.second;
    const bool identical = a.pretrained.params == b.pretrained.params &&
                           serialize_store(a.store) == serialize_store(b.store) &&
                           a.run.policy == b.run.policy && a.run.eval_params == b.run.eval_params &&
                           same_rows(a.run.metrics, b.run.metrics);

    RolloutStore big{{"acceptance", 16, "sector", 7}, {}};
    KeyedRng rng(606);
    for (std::size_t g = 0; g < 1000; ++g) {
        std::vector<Vector> xs;
        std::vector<double> rs;
        for (int j = 0; j < 16; ++j) {
            Vector x(2);
            x << rng.normal() * std::pow(10.0, static_cast<double>(rng.below(12)) - 6.0), rng.normal();
            xs.push_back(x);
            rs.push_back(rng.uniform());
        }
        big.groups.push_back(sort_group(xs, rs, static_cast<int>(g % 8), mix_key({7, g}), "sector"));
    }
    const auto dir = fs::temp_directory_path() / "gdro_acceptance_store";
    fs::remove_all(dir);
    const std::string text = serialize_store(big);
    save_store(big, dir / "store.jsonl");
    const auto back = load_store(dir / "store.jsonl");
    const bool round_trip = back == big && serialize_store(back) == text;
    fs::remove_all(dir);
    return {identical && round_trip,
            fmt("two seed-0 pipelines %s (params, store bytes, policy, EMA, metrics excl. wall_clock); 1000-group store "
                "round trip %s",
                identical ? "bit-identical" : "DIFFER", round_trip ? "byte-identical" : "DIFFERS")};
}

Outcome end_to_end_improvement() {
    const auto& p = default_run();
    const double base_r = p.baseline.mean_reward;
    const double base_q = p.baseline.mean_quality;
    const auto& last = p.run.metrics.rows.back();
    const double gain = last.mean_eval_reward - base_r;
    const double drop = base_q - last.mean_quality;
    const double seconds = runs().first_seconds;
    return {gain >= 0.15 && drop < 0.1 && seconds < 600.0,
            fmt("reward %.4f -> %.4f (gain %+.4f, need >= +0.15); quality %.4f -> %.4f (drop %.4f, need < 0.1); "
                "%.1f s (need < 600)",
                base_r, last.mean_eval_reward, gain, base_q, last.mean_quality, drop, seconds)};
}

Outcome reward_hacking() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto p = run_pipeline(shipped("hackable.cfg"));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto peak = find_peaks("hackable", p.run.metrics);
    double reward_at_peak = 0.0;
    for (const auto& row : p.run.metrics.rows)
        if (row.step == peak.peak_corrected_step) reward_at_peak = row.mean_eval_reward;
    const bool shape = peak.final_reward > reward_at_peak && peak.final_corrected < peak.peak_corrected;
    return {shape && seconds < 600.0,
            fmt("corrected peaks %.4f at step %lld (reward %.4f); final reward %.4f, final corrected %.4f; %.1f s",
                peak.peak_corrected, static_cast<long long>(peak.peak_corrected_step), reward_at_peak,
                peak.final_reward, peak.final_corrected, seconds)};
}

double worst_drop(const RunMetrics& m) {
    double worst = 0.0;
    for (std::size_t i = 1; i < m.rows.size(); ++i)
        worst = std::max(worst, m.rows[i - 1].corrected_score - m.rows[i].corrected_score);
    return worst;
}

Outcome group_size_stability() {
    const auto& k6 = default_run();
    const auto cfg2 = shipped("dpo_k2.cfg");
    const auto cfg6 = shipped("default.cfg");
    if (to_key_values(cfg2).find("seed = " + std::to_string(cfg6.seed)) == std::string::npos)
        return {false, "dpo_k2.cfg and default.cfg disagree on the seed"};
    const auto k2 = train(cfg2.train, k6.store, k6.pretrained.params, cfg2.train_context());
    const double d6 = worst_drop(k6.run.metrics);
    const double d2 = worst_drop(k2.metrics);
    return {d6 <= d2, fmt("worst step-over-step corrected drop: k=6 %.4f, k=2 (dpo) %.4f; need k=6 <= k=2", d6, d2)};
}

std::set<int> parse_list(const std::string& s) {
    std::set<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only, expect_fail;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if ((arg == "--only" || arg == "--expect-fail") && i + 1 < argc) {
            (arg == "--only" ? only : expect_fail) = parse_list(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--only N,...] [--expect-fail N,...]\n", argv[0]);
            return 2;
        }
    }

    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const Criterion criteria[] = {
        {1, "corrected-score reproduction", corrected_score_reproduction},
        {2, "reduction identities", reduction_identities},
        {3, "scalar-shift invariance", shift_invariance},
        {4, "Plackett-Luce normalization", pl_normalization},
        {5, "gradient checks", gradient_checks},
        {6, "flow correctness", flow_correctness},
        {7, "determinism and persistence", determinism_and_persistence},
        {8, "end-to-end improvement", end_to_end_improvement},
        {9, "reward-hacking demonstration", reward_hacking},
        {10, "group-size stability", group_size_stability},
    };

    int unexpected = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool known = expect_fail.count(c.id) > 0;
        std::printf("%s %2d %s: %s [%.1fs]%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    known ? (o.pass ? " (listed as expected failure but passed)" : " (expected failure)") : "");
        std::fflush(stdout);
        if (o.pass == known) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
