#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <boost/version.hpp>
#include <json.hpp>

#include "hlsv/config.hpp"
#include "hlsv/errors.hpp"
#include "hlsv/experiments.hpp"

namespace hlsv {

inline constexpr const char* kVersion = "0.1.0";

/// Column-oriented CSV builder: header row, '.' decimals, 17 significant digits.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header)
    {
        for (std::size_t c = 0; c < header.size(); ++c) text_ += (c ? "," : "") + header[c];
        text_ += "\n";
        columns_ = header.size();
    }

    template <class... Cells>
    void row(const Cells&... cells)
    {
        static_assert(sizeof...(Cells) > 0);
        std::size_t c = 0;
        ((text_ += (c++ ? "," : "") + cell(cells)), ...);
        if (c != columns_) throw std::logic_error("CsvWriter: row width differs from header");
        text_ += "\n";
    }

    const std::string& text() const { return text_; }

private:
    static std::string cell(double v) { return detail::fmt17(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <class I>
        requires std::is_integral_v<I>
    static std::string cell(I v)
    {
        return std::to_string(v);
    }

    std::string text_;
    std::size_t columns_ = 0;
};

/// Creates `dir` (and parents) and checks a file can be created in it.
inline void prepare_output_dir(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    const auto probe = dir / ".hlsv_write_probe";
    {
        std::ofstream out(probe);
        if (!out) throw IoError("output directory '" + dir.string() + "' is not writable");
    }
    std::filesystem::remove(probe, ec);
}

inline void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << content;
    out.close();
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

/// Output directory: explicit value, else $HLSV_OUT_DIR, else "hlsv_out".
inline std::filesystem::path resolve_output_dir(const std::string& configured)
{
    if (!configured.empty()) return configured;
    if (const char* env = std::getenv("HLSV_OUT_DIR"); env && *env) return env;
    return "hlsv_out";
}

inline nlohmann::ordered_json versions_json()
{
    nlohmann::ordered_json v;
    v["hlsv"] = kVersion;
#if defined(__clang__)
    v["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    v["compiler"] = std::string("gcc ") + __VERSION__;
#endif
    v["boost"] = BOOST_LIB_VERSION;
    v["cplusplus"] = static_cast<long>(__cplusplus);
#ifdef _OPENMP
    v["openmp"] = _OPENMP;
#endif
    return v;
}

inline std::string report_csv(const ConvergenceReport& rep)
{
    CsvWriter csv({"resolution", "rmse", "seed"});
    for (const auto& r : rep.rows) csv.row(r.resolution, r.rmse, r.seed);
    return csv.text();
}

inline nlohmann::ordered_json report_json(const ConvergenceReport& rep)
{
    nlohmann::ordered_json j;
    j["study"] = rep.study;
    j["slope"] = rep.fit.slope;
    j["intercept"] = rep.fit.intercept;
    j["ci95_low"] = rep.fit.ci95_low;
    j["ci95_high"] = rep.fit.ci95_high;
    j["rate"] = rep.rate;
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& [x, y] : rep.points) j["points"].push_back({x, y});
    j["median_rmse"] = rep.median_rmse();
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& r : rep.rows)
        j["cells"].push_back({{"resolution", r.resolution}, {"seed", r.seed}, {"wall_seconds", r.wall_seconds},
                              {"memory_bytes", r.memory_bytes}});
    j["warnings"] = rep.warnings;
    return j;
}

inline std::string summary_line(const ConvergenceReport& rep)
{
    if (rep.fit.n == 0) return "summary " + rep.study + ": no fit";
    return "summary " + rep.study + ": slope=" + detail::fmt17(rep.fit.slope) + " ci_low=" +
           detail::fmt17(rep.fit.ci95_low) + " ci_high=" + detail::fmt17(rep.fit.ci95_high) +
           " rate=" + detail::fmt17(rep.rate);
}

/// Log-log scatter of the seed-pooled points with the fitted line.
inline std::string loglog_svg(const ConvergenceReport& rep, const std::string& xlabel)
{
    constexpr double w = 640, h = 440, ml = 70, mr = 20, mt = 30, mb = 50;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& [x, y] : rep.points) {
        if (!(x > 0 && y > 0)) continue;
        x0 = std::min(x0, std::log10(x));
        x1 = std::max(x1, std::log10(x));
        y0 = std::min(y0, std::log10(y));
        y1 = std::max(y1, std::log10(y));
    }
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"440\">\n";
    s += "<rect width=\"640\" height=\"440\" fill=\"white\"/>\n";
    if (x1 < x0 || y1 < y0) return s + "</svg>\n";
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double lx) { return ml + (lx - x0) / (x1 - x0) * (w - ml - mr); };
    auto py = [&](double ly) { return h - mb - (ly - y0) / (y1 - y0) * (h - mt - mb); };
    auto num = [](double v) { return detail::fmt17(v); };
    s += "<rect x=\"" + num(ml) + "\" y=\"" + num(mt) + "\" width=\"" + num(w - ml - mr) + "\" height=\"" +
         num(h - mt - mb) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (const auto& [x, y] : rep.points) {
        if (!(x > 0 && y > 0)) continue;
        s += "<circle cx=\"" + num(px(std::log10(x))) + "\" cy=\"" + num(py(std::log10(y))) +
             "\" r=\"4\" fill=\"steelblue\"/>\n";
    }
    if (rep.fit.n > 0) {
        // Fit is in natural logs; convert to log10 coordinates.
        auto fit_ly = [&](double lx) { return (rep.fit.intercept + rep.fit.slope * lx * std::log(10.0)) / std::log(10.0); };
        s += "<line x1=\"" + num(px(x0)) + "\" y1=\"" + num(py(fit_ly(x0))) + "\" x2=\"" + num(px(x1)) + "\" y2=\"" +
             num(py(fit_ly(x1))) + "\" stroke=\"firebrick\"/>\n";
        s += "<text x=\"" + num(ml + 10) + "\" y=\"" + num(mt + 20) + "\" font-size=\"14\">slope " +
             num(std::round(rep.fit.slope * 1000) / 1000) + "</text>\n";
    }
    s += "<text x=\"" + num(w / 2) + "\" y=\"" + num(h - 15) + "\" font-size=\"14\" text-anchor=\"middle\">log10 " +
         xlabel + "</text>\n";
    s += "<text x=\"15\" y=\"" + num(h / 2) + "\" font-size=\"14\" transform=\"rotate(-90 15 " + num(h / 2) +
         ")\" text-anchor=\"middle\">log10 rmse</text>\n";
    return s + "</svg>\n";
}

} // namespace hlsv
