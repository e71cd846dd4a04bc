#include "gdro/harness.hpp"
#include "gdro/io.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace gdro;

namespace {

py::tuple score_loss(const ScoreLoss& l) { return py::make_tuple(l.value, l.grad); }

py::dict metrics_dict(const RunMetrics& m) {
    std::vector<std::int64_t> step;
    std::vector<double> cols[8];
    for (const auto& r : m.rows) {
        step.push_back(r.step);
        const double vals[8] = {r.l_gdro,         r.l_reg,           r.l_final,      r.mean_eval_reward,
                                r.mean_quality, r.corrected_score, r.top1_fm_loss, r.wall_clock};
        for (int i = 0; i < 8; ++i) cols[i].push_back(vals[i]);
    }
    const char* names[8] = {"l_gdro",       "l_reg",           "l_final",      "mean_eval_reward",
                            "mean_quality", "corrected_score", "top1_fm_loss", "wall_clock"};
    py::dict d;
    d["step"] = step;
    for (int i = 0; i < 8; ++i) d[names[i]] = cols[i];
    return d;
}

py::dict eval_dict(const EvalResult& e) {
    py::dict d;
    d["mean_reward"] = e.mean_reward;
    d["mean_quality"] = e.mean_quality;
    d["corrected_score"] = e.corrected_score;
    d["samples"] = e.samples;
    return d;
}

ExperimentConfig with_overrides(ExperimentConfig config, const std::map<std::string, std::string>& overrides) {
    apply_key_values(config, overrides);
    return config;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Group-level direct reward optimization on a 2-D rectified-flow task";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<StoreFormatError>(m, "StoreFormatError", PyExc_ValueError);
    py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);
    py::register_exception<TrainingAborted>(m, "TrainingAborted", PyExc_RuntimeError);

    // Task
    m.def("sector_reward", [](const Vector& x, int c) { return sector_reward(x, c); }, py::arg("x"),
          py::arg("condition"));
    m.def("hackable_reward", [](const Vector& x, int c) { return hackable_reward(x, c); }, py::arg("x"),
          py::arg("condition"));
    m.def("quality_score", [](const Vector& x) { return quality_score(x); }, py::arg("x"));
    m.def(
        "corrected_score",
        [](double reward, const std::vector<double>& facets, const std::string& kind) {
            return corrected_score(reward, facets, parse_score_kind(kind));
        },
        py::arg("reward"), py::arg("facets"), py::arg("kind") = "ocr");

    // Flow
    m.def(
        "perturb",
        [](const Vector& x0, const Vector& eps, double t) {
            const auto p = perturb(x0, eps, t);
            return py::make_tuple(p.x_t, p.v_target);
        },
        py::arg("x0"), py::arg("eps"), py::arg("t"), "Returns (x_t, velocity target).");
    m.def(
        "euler_sample",
        [](const std::function<Vector(const Vector&, double, int)>& field, int condition, const Vector& noise,
           int steps) { return euler_sample(field, condition, noise, steps); },
        py::arg("field"), py::arg("condition"), py::arg("noise"), py::arg("steps"));

    // Losses: each returns (value, gradient w.r.t. the scores)
    m.def("log_sum_exp", [](const std::vector<double>& x) { return log_sum_exp(x); });
    m.def(
        "gdro_loss",
        [](const std::vector<double>& s, const std::vector<double>& r, double tau) {
            return score_loss(gdro_loss(s, r, tau));
        },
        py::arg("scores"), py::arg("rewards"), py::arg("tau"));
    m.def("rank_loss", [](const std::vector<double>& s) { return score_loss(rank_loss(s)); }, py::arg("scores"));
    m.def(
        "dpo_loss", [](double sp, double sm) { return score_loss(dpo_loss(sp, sm)); }, py::arg("s_plus"),
        py::arg("s_minus"));
    m.def(
        "top1_ce_loss",
        [](const std::vector<double>& s, const std::vector<double>& r, double tau) {
            return score_loss(top1_ce_loss(s, r, tau));
        },
        py::arg("scores"), py::arg("rewards"), py::arg("tau"));
    m.def(
        "suffix_distribution",
        [](const std::vector<double>& r, std::size_t start, double tau) {
            return suffix_distribution(r, start, tau).q;
        },
        py::arg("rewards"), py::arg("start"), py::arg("tau"));
    m.def(
        "pl_likelihood",
        [](const std::vector<double>& s, const std::vector<std::size_t>& ranking) {
            return pl_likelihood(s, ranking);
        },
        py::arg("scores"), py::arg("ranking"));

    // Rollout stores
    py::class_<SampleGroup>(m, "SampleGroup")
        .def_readonly("condition", &SampleGroup::condition)
        .def_readonly("samples", &SampleGroup::samples)
        .def_readonly("rewards", &SampleGroup::rewards)
        .def_readonly("seed", &SampleGroup::seed)
        .def_readonly("reward_name", &SampleGroup::reward_name);
    py::class_<RolloutStore>(m, "RolloutStore")
        .def_property_readonly("checkpoint_id", [](const RolloutStore& s) { return s.meta.checkpoint_id; })
        .def_property_readonly("k", [](const RolloutStore& s) { return s.meta.k; })
        .def_property_readonly("reward_name", [](const RolloutStore& s) { return s.meta.reward_name; })
        .def_property_readonly("seed", [](const RolloutStore& s) { return s.meta.seed; })
        .def_readonly("groups", &RolloutStore::groups)
        .def("__len__", [](const RolloutStore& s) { return s.groups.size(); })
        .def("serialize", &serialize_store)
        .def("__eq__", [](const RolloutStore& a, const RolloutStore& b) { return a == b; });
    m.def("load_store", &load_store, py::arg("path"));
    m.def("save_store", &save_store, py::arg("store"), py::arg("path"));

    // Experiments
    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def(py::init<>())
        .def_readonly("seed", &ExperimentConfig::seed)
        .def("to_text", &to_key_values)
        .def(
            "with_overrides", &with_overrides, py::arg("overrides"),
            "Copy with `section.key` overrides applied, as with `--set` on the command line.");
    m.def("load_config", &load_experiment_config, py::arg("path"));

    m.def(
        "run_pipeline",
        [](const ExperimentConfig& config) {
            PipelineResult p;
            {
                py::gil_scoped_release release;
                p = run_pipeline(config);
            }
            py::dict d;
            d["baseline"] = eval_dict(p.baseline);
            d["metrics"] = metrics_dict(p.run.metrics);
            d["pretrain_loss"] = p.pretrained.losses.empty() ? 0.0 : p.pretrained.losses.back().loss;
            d["store"] = std::move(p.store);
            return d;
        },
        py::arg("config"), "Pretrain, generate rollouts, evaluate the baseline and post-train.");
    m.def(
        "evaluate_checkpoint",
        [](const std::filesystem::path& path, const ExperimentConfig& config) {
            const auto ckpt = load_checkpoint(path);
            EvalResult e;
            {
                py::gil_scoped_release release;
                e = evaluate(ckpt.params, config.eval, config.task);
            }
            return eval_dict(e);
        },
        py::arg("checkpoint"), py::arg("config"));
    m.def(
        "read_metrics", [](const std::filesystem::path& path) { return metrics_dict(RunMetrics::from_csv(read_file(path))); },
        py::arg("path"), "Columns of a run's metrics.csv.");

    m.def(
        "main",
        [](const std::vector<std::string>& args) {
            py::gil_scoped_release release;
            return run_cli(args);
        },
        py::arg("args"), "Runs the command-line tool with `args` (without the program name).");
}
