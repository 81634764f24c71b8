#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "geoprobe/errors.hpp"
#include "geoprobe/json_util.hpp"
#include "geoprobe/runner.hpp"

namespace geoprobe::runner {

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string csv_safe(std::string s) {
    for (char& c : s) {
        if (c == ',') c = ';';
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// --- svg -----------------------------------------------------------------------

constexpr double kPanelW = 360.0;
constexpr double kPanelH = 280.0;
constexpr double kMarginL = 64.0;
constexpr double kMarginR = 24.0;
constexpr double kMarginT = 56.0;
constexpr double kMarginB = 56.0;
constexpr double kPanelGap = 48.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct SeriesKey {
    std::string scheme;
    int k_clusters = 0;
    auto operator<=>(const SeriesKey&) const = default;

    std::string label() const {
        return k_clusters > 0 ? scheme + " k=" + std::to_string(k_clusters) : scheme;
    }
};

std::string svg_text(double x, double y, const std::string& text, const std::string& anchor,
                     int size = 12) {
    std::ostringstream out;
    out << "  <text x=\"" << fmt_g(x) << "\" y=\"" << fmt_g(y) << "\" font-family=\"sans-serif\""
        << " font-size=\"" << size << "\" text-anchor=\"" << anchor << "\">" << text
        << "</text>\n";
    return out.str();
}

std::string curves_svg(const CurveResult& result) {
    // Axis domain: the union of sizes; series: one per (scheme, k) per panel.
    std::vector<std::string> featurizers;
    std::vector<SeriesKey> series;
    std::vector<std::size_t> sizes;
    for (const auto& row : result.rows) {
        if (std::find(featurizers.begin(), featurizers.end(), row.featurizer) ==
            featurizers.end())
            featurizers.push_back(row.featurizer);
        const SeriesKey key{row.scheme, row.k_clusters};
        if (std::find(series.begin(), series.end(), key) == series.end()) series.push_back(key);
        if (std::find(sizes.begin(), sizes.end(), row.n_requested) == sizes.end())
            sizes.push_back(row.n_requested);
    }
    std::sort(sizes.begin(), sizes.end());

    const double width =
        kMarginL + featurizers.size() * kPanelW + (featurizers.size() - 1) * kPanelGap + kMarginR;
    const double height = kMarginT + kPanelH + kMarginB;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt_g(width) << "\" height=\""
        << fmt_g(height) << "\" viewBox=\"0 0 " << fmt_g(width) << ' ' << fmt_g(height)
        << "\">\n";
    out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    const auto x_of = [&](std::size_t panel, std::size_t size_idx) {
        const double x0 = kMarginL + panel * (kPanelW + kPanelGap);
        return x0 + (size_idx + 0.5) * kPanelW / sizes.size();
    };
    const auto y_of = [&](double map) { return kMarginT + (1.0 - map) * kPanelH; };

    for (std::size_t p = 0; p < featurizers.size(); ++p) {
        const double x0 = kMarginL + p * (kPanelW + kPanelGap);

        out << svg_text(x0 + kPanelW / 2, kMarginT - 16, featurizers[p], "middle", 14);
        // Axes and horizontal grid.
        out << "  <line x1=\"" << fmt_g(x0) << "\" y1=\"" << fmt_g(kMarginT) << "\" x2=\""
            << fmt_g(x0) << "\" y2=\"" << fmt_g(kMarginT + kPanelH)
            << "\" stroke=\"black\"/>\n";
        out << "  <line x1=\"" << fmt_g(x0) << "\" y1=\"" << fmt_g(kMarginT + kPanelH)
            << "\" x2=\"" << fmt_g(x0 + kPanelW) << "\" y2=\"" << fmt_g(kMarginT + kPanelH)
            << "\" stroke=\"black\"/>\n";
        for (int tick = 0; tick <= 5; ++tick) {
            const double v = tick / 5.0;
            out << "  <line x1=\"" << fmt_g(x0) << "\" y1=\"" << fmt_g(y_of(v)) << "\" x2=\""
                << fmt_g(x0 + kPanelW) << "\" y2=\"" << fmt_g(y_of(v))
                << "\" stroke=\"#dddddd\"/>\n";
            if (p == 0) out << svg_text(x0 - 8, y_of(v) + 4, fmt_g(v), "end", 11);
        }
        for (std::size_t z = 0; z < sizes.size(); ++z)
            out << svg_text(x_of(p, z), kMarginT + kPanelH + 18, std::to_string(sizes[z]),
                            "middle", 11);
        out << svg_text(x0 + kPanelW / 2, kMarginT + kPanelH + 40, "training sample size",
                        "middle", 12);
        if (p == 0) {
            out << "  <g transform=\"translate(" << fmt_g(x0 - 44) << ' '
                << fmt_g(kMarginT + kPanelH / 2) << ") rotate(-90)\">"
                << "<text font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">"
                << "MAP</text></g>\n";
        }

        // Dashed reference line for this panel.
        const auto ref = result.reference_map.find(featurizers[p]);
        if (ref != result.reference_map.end()) {
            out << "  <line x1=\"" << fmt_g(x0) << "\" y1=\"" << fmt_g(y_of(ref->second))
                << "\" x2=\"" << fmt_g(x0 + kPanelW) << "\" y2=\"" << fmt_g(y_of(ref->second))
                << "\" stroke=\"#555555\" stroke-dasharray=\"6,4\"/>\n";
        }

        for (std::size_t si = 0; si < series.size(); ++si) {
            const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
            std::ostringstream points;
            for (std::size_t z = 0; z < sizes.size(); ++z) {
                std::vector<double> maps;
                for (const auto& row : result.rows)
                    if (row.ok() && row.featurizer == featurizers[p] &&
                        row.scheme == series[si].scheme && row.k_clusters == series[si].k_clusters &&
                        row.n_requested == sizes[z])
                        maps.push_back(row.report.map);
                if (maps.empty()) continue;
                const double x = x_of(p, z);
                points << fmt_g(x) << ',' << fmt_g(y_of(median_of(maps))) << ' ';
                // Min-max whisker across seeds.
                const auto [lo, hi] = std::minmax_element(maps.begin(), maps.end());
                out << "  <line x1=\"" << fmt_g(x) << "\" y1=\"" << fmt_g(y_of(*lo)) << "\" x2=\""
                    << fmt_g(x) << "\" y2=\"" << fmt_g(y_of(*hi)) << "\" stroke=\"" << color
                    << "\" stroke-width=\"1\" opacity=\"0.6\"/>\n";
            }
            out << "  <polyline fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"2\" points=\"" << points.str() << "\"/>\n";
        }
    }

    // Legend.
    for (std::size_t si = 0; si < series.size(); ++si) {
        const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        const double lx = kMarginL + si * 130.0;
        out << "  <line x1=\"" << fmt_g(lx) << "\" y1=\"14\" x2=\"" << fmt_g(lx + 22)
            << "\" y2=\"14\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << svg_text(lx + 28, 18, series[si].label(), "start", 12);
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace

std::string results_csv(const CurveResult& result) {
    std::ostringstream out;
    out << "scheme,k_clusters,featurizer,n_requested,n_train_effective,seed,lambda,map,"
           "ap_class0,ap_class1,ap_class2,status,reason\n";
    for (const auto& row : result.rows) {
        out << row.scheme << ',' << row.k_clusters << ',' << row.featurizer << ','
            << row.n_requested << ',' << row.n_train_effective << ',' << row.seed << ',';
        if (row.ok()) {
            out << fmt_g(row.lambda) << ',' << fmt_g(row.report.map) << ','
                << fmt_g(row.report.per_class_ap[0]) << ',' << fmt_g(row.report.per_class_ap[1])
                << ',' << fmt_g(row.report.per_class_ap[2]);
        } else {
            out << ",,,,";
        }
        out << ',' << row.status << ',' << csv_safe(row.reason) << '\n';
    }
    return out.str();
}

nlohmann::json result_to_json(const CurveResult& result) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : result.rows) {
        nlohmann::json r{{"scheme", row.scheme},
                         {"k_clusters", row.k_clusters},
                         {"featurizer", row.featurizer},
                         {"n_requested", row.n_requested},
                         {"n_train_effective", row.n_train_effective},
                         {"seed", row.seed},
                         {"status", row.status},
                         {"reason", row.reason}};
        if (row.ok()) {
            r["lambda"] = row.lambda;
            r["map"] = row.report.map;
            r["per_class_ap"] = row.report.per_class_ap;
            r["n_test"] = row.report.n_test;
            r["class_prevalence"] = row.report.class_prevalence;
        }
        rows.push_back(std::move(r));
    }
    nlohmann::json j{{"rows", rows}, {"reference_n", result.reference_n}};
    j["reference_map"] = nlohmann::json::object();
    for (const auto& [name, value] : result.reference_map) j["reference_map"][name] = value;
    return j;
}

CurveResult result_from_json(const nlohmann::json& j) {
    CurveResult result;
    try {
        result.reference_n = j.value("reference_n", std::size_t{0});
        if (j.contains("reference_map"))
            for (const auto& [name, value] : j.at("reference_map").items())
                result.reference_map[name] = value.get<double>();
        for (const auto& r : j.at("rows")) {
            CellRow row;
            row.scheme = r.at("scheme").get<std::string>();
            row.k_clusters = r.at("k_clusters").get<int>();
            row.featurizer = r.at("featurizer").get<std::string>();
            row.n_requested = r.at("n_requested").get<std::size_t>();
            row.n_train_effective = r.at("n_train_effective").get<std::size_t>();
            row.seed = r.at("seed").get<std::uint64_t>();
            row.status = r.at("status").get<std::string>();
            row.reason = r.at("reason").get<std::string>();
            row.report.scheme = row.scheme;
            row.report.featurizer = row.featurizer;
            row.report.n_requested = row.n_requested;
            row.report.seed = row.seed;
            row.report.n_train_effective = row.n_train_effective;
            if (row.ok()) {
                row.lambda = r.at("lambda").get<double>();
                row.report.map = r.at("map").get<double>();
                row.report.per_class_ap = r.at("per_class_ap").get<std::array<double, 3>>();
                row.report.n_test = r.at("n_test").get<std::size_t>();
                row.report.class_prevalence =
                    r.at("class_prevalence").get<std::array<double, 3>>();
            }
            result.rows.push_back(std::move(row));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad results JSON: ") + e.what());
    }
    return result;
}

CurveResult load_result_json(const std::filesystem::path& path) {
    return result_from_json(load_json_file(path));
}

void emit_report(const CurveResult& result, const std::filesystem::path& out_dir,
                 const std::string& format) {
    if (result.rows.empty()) throw DataError("emit_report: empty result");
    if (format != "all" && format != "csv" && format != "json" && format != "svg")
        throw ConfigError("emit_report: format must be all, csv, json, or svg");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output dir " + out_dir.string());

    const auto write_file = [&](const char* name, const std::string& body) {
        const auto path = out_dir / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write " + path.string());
        out << body;
        out.close();
        if (!out) throw DataError("write failed for " + path.string());
    };

    if (format == "all" || format == "csv") write_file("results.csv", results_csv(result));
    if (format == "all" || format == "json")
        write_file("results.json", result_to_json(result).dump(2) + "\n");
    if (format == "all" || format == "svg") write_file("curves.svg", curves_svg(result));
}

}  // namespace geoprobe::runner
