#include "inst4d/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "inst4d/errors.hpp"

namespace inst4d {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v, const char* flag) {
    return v ? fmt(*v) : std::string(flag);
}

// Minimal line plot: fixed 480x280 canvas, axes, one polyline per series.
std::string svg_line_plot(const std::string& title,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    const int w = 480, h = 280, ml = 48, mb = 32, mt = 28, mr = 12;
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << ml << "\" y=\"18\" font-family=\"monospace\" font-size=\"13\">" << title
        << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";

    size_t max_len = 0;
    double lo = 0.0, hi = 1.0;
    bool first = true;
    for (const auto& [name, values] : series) {
        max_len = std::max(max_len, values.size());
        for (double v : values) {
            if (!std::isfinite(v)) continue;
            if (first) {
                lo = hi = v;
                first = false;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    if (first || hi == lo) hi = lo + 1.0;

    const char* colors[] = {"#1a6fb0", "#c24a2e", "#3c8a3c", "#8450a0"};
    int ci = 0;
    for (const auto& [name, values] : series) {
        if (!values.empty()) {
            std::ostringstream pts;
            for (size_t i = 0; i < values.size(); ++i) {
                double x = ml + (w - ml - mr) * (max_len <= 1 ? 0.0 : static_cast<double>(i) /
                                                                          (max_len - 1));
                double vv = std::isfinite(values[i]) ? values[i] : lo;
                double y = (h - mb) - (h - mb - mt) * (vv - lo) / (hi - lo);
                pts << fmt(x) << "," << fmt(y) << " ";
            }
            out << "<polyline fill=\"none\" stroke=\"" << colors[ci % 4] << "\" points=\""
                << pts.str() << "\"/>\n";
        }
        out << "<text x=\"" << ml + 8 + 110 * ci << "\" y=\"" << h - 10
            << "\" font-family=\"monospace\" font-size=\"11\" fill=\"" << colors[ci % 4] << "\">"
            << name << "</text>\n";
        ++ci;
    }
    out << "<text x=\"4\" y=\"" << mt + 4 << "\" font-family=\"monospace\" font-size=\"10\">"
        << fmt(hi) << "</text>\n";
    out << "<text x=\"4\" y=\"" << h - mb << "\" font-family=\"monospace\" font-size=\"10\">"
        << fmt(lo) << "</text>\n";
    out << "</svg>\n";
    return out.str();
}

json scene_json(const SceneMetrics& s) {
    json j;
    j["name"] = s.name;
    auto put = [&j](const char* key, const std::optional<double>& v, const char* flag) {
        if (v) {
            j[key] = *v;
        } else {
            j[key] = flag;
        }
    };
    put("miou_instance", s.miou_instance, "UNDEFINED");
    put("macc", s.macc, "UNDEFINED");
    put("miou_dynamic", s.miou_dynamic, "UNDEFINED");
    put("psnr_db", s.psnr_db, "INFINITE");
    j["ssim"] = s.ssim;
    put("traj_rmse", s.traj_rmse, "UNDEFINED");
    put("perm_accuracy", s.perm_accuracy, "UNDEFINED");
    return j;
}

}  // namespace

void write_log_csv(const std::vector<LossRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_log_csv: cannot open " + path.string());
    out << "stage,step,timestep,ce,l1,ssim,coord,len,iso,total,active_views\n";
    for (const LossRow& r : rows) {
        out << r.stage << "," << r.step << "," << r.timestep << "," << fmt(r.ce) << ","
            << fmt(r.l1) << "," << fmt(r.ssim) << "," << fmt(r.coord) << "," << fmt(r.len) << ","
            << fmt(r.iso) << "," << fmt(r.total) << "," << r.active_views << "\n";
    }
}

std::vector<LossRow> read_log_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPrerequisiteError("missing file: " + path.string());
    std::vector<LossRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LossRow r;
        std::istringstream ss(line);
        char comma;
        ss >> r.stage >> comma >> r.step >> comma >> r.timestep >> comma >> r.ce >> comma >>
            r.l1 >> comma >> r.ssim >> comma >> r.coord >> comma >> r.len >> comma >> r.iso >>
            comma >> r.total >> comma >> r.active_views;
        rows.push_back(r);
    }
    return rows;
}

void save_metrics_json(const MetricsBundle& bundle, const std::filesystem::path& path) {
    json doc;
    doc["format_version"] = 1;
    doc["meta"] = {{"seed", bundle.seed}, {"config_hash", bundle.config_hash}};
    json scenes = json::array();
    json agg;
    std::map<std::string, std::pair<double, int>> sums;
    for (const SceneMetrics& s : bundle.scenes) {
        scenes.push_back(scene_json(s));
        auto add = [&sums](const char* key, const std::optional<double>& v) {
            if (v) {
                sums[key].first += *v;
                sums[key].second += 1;
            }
        };
        add("miou_instance", s.miou_instance);
        add("macc", s.macc);
        add("miou_dynamic", s.miou_dynamic);
        add("psnr_db", s.psnr_db);
        add("ssim", s.ssim);
        add("traj_rmse", s.traj_rmse);
        add("perm_accuracy", s.perm_accuracy);
    }
    doc["scenes"] = std::move(scenes);
    for (const auto& [key, acc] : sums) {
        if (acc.second > 0) agg[key] = acc.first / acc.second;
    }
    doc["aggregate"] = std::move(agg);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_metrics_json: cannot open " + path.string());
    out << doc.dump(2) << "\n";
}

MetricsBundle load_metrics_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPrerequisiteError("missing file: " + path.string());
    json doc = json::parse(in);
    if (doc.value("format_version", 0) != 1) {
        throw FormatError("metrics.json: unsupported format_version");
    }
    MetricsBundle bundle;
    bundle.seed = doc.at("meta").value("seed", 0ull);
    bundle.config_hash = doc.at("meta").value("config_hash", "");
    for (const json& j : doc.at("scenes")) {
        SceneMetrics s;
        s.name = j.value("name", "");
        auto get = [&j](const char* key) -> std::optional<double> {
            if (!j.contains(key) || j.at(key).is_string()) return std::nullopt;
            return j.at(key).get<double>();
        };
        s.miou_instance = get("miou_instance");
        s.macc = get("macc");
        s.miou_dynamic = get("miou_dynamic");
        s.psnr_db = get("psnr_db");
        s.ssim = j.value("ssim", 0.0);
        s.traj_rmse = get("traj_rmse");
        s.perm_accuracy = get("perm_accuracy");
        bundle.scenes.push_back(std::move(s));
    }
    return bundle;
}

void emit_report(const MetricsBundle& bundle, const std::filesystem::path& out_dir,
                 const std::vector<LossRow>* log, const std::vector<double>* traj_per_timestep) {
    std::filesystem::create_directories(out_dir);
    save_metrics_json(bundle, out_dir / "metrics.json");

    std::ofstream csv(out_dir / "metrics.csv");
    if (!csv) throw std::runtime_error("emit_report: cannot open metrics.csv");
    csv << "scene,miou_instance,macc,miou_dynamic,psnr_db,ssim,traj_rmse,perm_accuracy\n";
    for (const SceneMetrics& s : bundle.scenes) {
        csv << s.name << "," << fmt_opt(s.miou_instance, "UNDEFINED") << ","
            << fmt_opt(s.macc, "UNDEFINED") << "," << fmt_opt(s.miou_dynamic, "UNDEFINED") << ","
            << fmt_opt(s.psnr_db, "INFINITE") << "," << fmt(s.ssim) << ","
            << fmt_opt(s.traj_rmse, "UNDEFINED") << "," << fmt_opt(s.perm_accuracy, "UNDEFINED")
            << "\n";
    }
    csv.close();

    std::vector<std::pair<std::string, std::vector<double>>> loss_series;
    if (log && !log->empty()) {
        std::vector<double> total, photometric;
        for (const LossRow& r : *log) {
            total.push_back(r.total);
            photometric.push_back(r.l1 + r.ssim);
        }
        loss_series.push_back({"total", total});
        loss_series.push_back({"photo", photometric});
    }
    std::ofstream loss_svg(out_dir / "loss_history.svg");
    loss_svg << svg_line_plot("loss history", loss_series);
    loss_svg.close();

    std::vector<std::pair<std::string, std::vector<double>>> traj_series;
    if (traj_per_timestep && !traj_per_timestep->empty()) {
        traj_series.push_back({"rmse", *traj_per_timestep});
    }
    std::ofstream traj_svg(out_dir / "traj_error.svg");
    traj_svg << svg_line_plot("trajectory error per timestep", traj_series);
    traj_svg.close();
}

}  // namespace inst4d
