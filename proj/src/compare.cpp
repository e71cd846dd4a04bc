#include "gdro/harness.hpp"

#include "gdro/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace gdro {

RunPeak find_peaks(const std::string& run, const RunMetrics& metrics) {
    if (metrics.rows.empty()) throw std::invalid_argument("find_peaks: run '" + run + "' has no rows");
    RunPeak p;
    p.run = run;
    p.peak_corrected = -std::numeric_limits<double>::infinity();
    p.peak_reward = -std::numeric_limits<double>::infinity();
    for (const auto& r : metrics.rows) {
        if (r.corrected_score > p.peak_corrected) {
            p.peak_corrected = r.corrected_score;
            p.peak_corrected_step = r.step;
        }
        if (r.mean_eval_reward > p.peak_reward) {
            p.peak_reward = r.mean_eval_reward;
            p.peak_reward_step = r.step;
        }
    }
    p.final_reward = metrics.rows.back().mean_eval_reward;
    p.final_corrected = metrics.rows.back().corrected_score;
    return p;
}

Comparison compare_runs(std::span<const NamedRun> runs) {
    Comparison cmp;
    std::ostringstream lc;
    lc << "run,step,wall_clock,metric,value\n";
    std::ostringstream pc;
    pc << "run,peak_corrected_step,peak_corrected,peak_reward_step,peak_reward,final_reward,final_corrected\n";
    for (const auto& run : runs) {
        for (const auto& r : run.metrics.rows) {
            const std::pair<const char*, double> cols[] = {
                {"l_gdro", r.l_gdro},
                {"l_reg", r.l_reg},
                {"l_final", r.l_final},
                {"mean_eval_reward", r.mean_eval_reward},
                {"mean_quality", r.mean_quality},
                {"corrected_score", r.corrected_score},
                {"top1_fm_loss", r.top1_fm_loss},
            };
            for (const auto& [name, value] : cols) {
                lc << run.name << ',' << r.step << ',' << format_double(r.wall_clock) << ',' << name << ','
                   << format_double(value) << '\n';
            }
        }
        const auto p = find_peaks(run.name, run.metrics);
        pc << p.run << ',' << p.peak_corrected_step << ',' << format_double(p.peak_corrected) << ','
           << p.peak_reward_step << ',' << format_double(p.peak_reward) << ',' << format_double(p.final_reward)
           << ',' << format_double(p.final_corrected) << '\n';
        cmp.peaks.push_back(p);
    }
    cmp.long_csv = lc.str();
    cmp.peaks_csv = pc.str();
    return cmp;
}

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

std::string tick_label(double v) {
    std::ostringstream ss;
    ss.precision(3);
    ss << v;
    return ss.str();
}

}  // namespace

std::string render_line_chart_svg(const std::string& title, const std::string& x_label,
                                  const std::string& y_label, std::span<const Series> series) {
    constexpr double width = 720, height = 440;
    constexpr double left = 70, right = 170, top = 40, bottom = 55;
    const double pw = width - left - right;
    const double ph = height - top - bottom;
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
    double y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!std::isfinite(x0)) { x0 = 0; x1 = 1; y0 = 0; y1 = 1; }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) { y0 -= 0.5; y1 += 0.5; }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << xml_escape(title) << "</text>\n"
        << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = x0 + (x1 - x0) * i / 5.0;
        const double fy = y0 + (y1 - y0) * i / 5.0;
        svg << "<line x1=\"" << sx(fx) << "\" y1=\"" << top + ph << "\" x2=\"" << sx(fx) << "\" y2=\"" << top
            << "\" stroke=\"#eee\"/>\n"
            << "<text x=\"" << sx(fx) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
            << tick_label(fx) << "</text>\n"
            << "<line x1=\"" << left << "\" y1=\"" << sy(fy) << "\" x2=\"" << left + pw << "\" y2=\"" << sy(fy)
            << "\" stroke=\"#eee\"/>\n"
            << "<text x=\"" << left - 6 << "\" y=\"" << sy(fy) + 4 << "\" text-anchor=\"end\">" << tick_label(fy)
            << "</text>\n";
    }
    svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
        << xml_escape(x_label) << "</text>\n"
        << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << xml_escape(y_label) << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = palette[si % std::size(palette)];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            svg << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
        }
        svg << "\"/>\n";
        const double ly = top + 10 + 18.0 * static_cast<double>(si);
        svg << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\""
            << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

CompareOutput compare(std::span<const std::filesystem::path> run_dirs, const std::filesystem::path& out_dir) {
    CompareOutput out;
    std::vector<NamedRun> runs;
    std::set<std::string> names;
    for (const auto& dir : run_dirs) {
        const auto metrics_path = dir / "metrics.csv";
        if (!std::filesystem::exists(metrics_path)) {
            out.warnings.push_back("skipping " + dir.string() + ": no metrics.csv");
            continue;
        }
        std::string name = dir.filename().string();
        if (name.empty()) name = dir.parent_path().filename().string();
        if (names.count(name)) name = dir.string();
        names.insert(name);
        runs.push_back({name, RunMetrics::from_csv(read_file(metrics_path))});
    }
    if (runs.empty()) throw std::invalid_argument("compare: no run with metrics");
    out.comparison = compare_runs(runs);

    auto emit = [&](const std::string& file, const std::string& contents) {
        const auto path = out_dir / file;
        write_file_atomic(path, contents);
        out.written.push_back(path);
    };
    emit("comparison.csv", out.comparison.long_csv);
    emit("peaks.csv", out.comparison.peaks_csv);

    struct Chart {
        const char* file;
        const char* title;
        bool by_wall_clock;
        bool corrected;
    };
    const Chart charts[] = {
        {"reward_vs_step.svg", "Evaluation reward", false, false},
        {"corrected_vs_step.svg", "Corrected score", false, true},
        {"reward_vs_wallclock.svg", "Evaluation reward", true, false},
        {"corrected_vs_wallclock.svg", "Corrected score", true, true},
    };
    for (const auto& chart : charts) {
        std::vector<Series> series;
        for (const auto& run : runs) {
            Series s{run.name, {}, {}};
            for (const auto& r : run.metrics.rows) {
                s.x.push_back(chart.by_wall_clock ? r.wall_clock : static_cast<double>(r.step));
                s.y.push_back(chart.corrected ? r.corrected_score : r.mean_eval_reward);
            }
            series.push_back(std::move(s));
        }
        emit(chart.file, render_line_chart_svg(chart.title, chart.by_wall_clock ? "wall-clock (s)" : "step",
                                               chart.corrected ? "corrected score" : "mean reward", series));
    }
    return out;
}

}  // namespace gdro
