#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "tkc/io.hpp"

namespace tkc {

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t end = s.find(sep, start);
        out.push_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return out;
}

double parse_double(std::string_view s, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && ptr == s.data() + s.size(), ErrorCode::Parse,
            fmt::format("line {}: '{}' is not a number", line, s));
    return v;
}

std::size_t parse_size(std::string_view s, const char* what) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && ptr == s.data() + s.size() && v > 0, ErrorCode::Parse,
            fmt::format("bad {} '{}' in batch spec", what, s));
    return v;
}

// Signed percentage change from `before` to `after`, as a reduction.
std::string reduction(Count before, Count after) {
    if (after <= before) return format_percent(before - after, before);
    return "-" + format_percent(after - before, before);
}

std::vector<const LayerCost*> table_order(const CostReport& r) {
    std::vector<const LayerCost*> rows;
    for (const auto& l : r.layers)
        if (l.role == LayerRole::Main) rows.push_back(&l);
    for (const auto& l : r.layers)
        if (l.role == LayerRole::Shortcut) rows.push_back(&l);
    return rows;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string curves_to_csv(const std::vector<DistortionCurve>& curves) {
    std::string out = "layer,gamma,distortion\n";
    for (const auto& c : curves) {
        auto samples = c.samples;
        std::stable_sort(samples.begin(), samples.end(),
                         [](const DistortionSample& a, const DistortionSample& b) { return a.gamma > b.gamma; });
        for (const auto& s : samples) out += fmt::format("{},{:.9g},{:.9g}\n", c.layer, s.gamma, s.distortion);
    }
    return out;
}

std::vector<DistortionCurve> curves_from_csv(std::string_view csv) {
    auto lines = split(csv, '\n');
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    require(!lines.empty(), ErrorCode::Parse, "empty curve file");
    auto strip_cr = [](std::string_view l) { return !l.empty() && l.back() == '\r' ? l.substr(0, l.size() - 1) : l; };
    require(strip_cr(lines[0]) == "layer,gamma,distortion", ErrorCode::Parse,
            "curve file must start with the header 'layer,gamma,distortion'");

    std::vector<DistortionCurve> curves;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto fields = split(strip_cr(lines[i]), ',');
        require(fields.size() == 3 && !fields[0].empty(), ErrorCode::Parse,
                fmt::format("line {}: expected layer,gamma,distortion", i + 1));
        const std::string layer(fields[0]);
        if (curves.empty() || curves.back().layer != layer) {
            for (const auto& c : curves)
                require(c.layer != layer, ErrorCode::Parse,
                        fmt::format("line {}: rows for layer '{}' are not contiguous", i + 1, layer));
            curves.push_back({layer, {}});
        }
        DistortionSample s;
        s.gamma = parse_double(fields[1], i + 1);
        s.distortion = parse_double(fields[2], i + 1);
        auto& samples = curves.back().samples;
        require(samples.empty() || s.gamma < samples.back().gamma, ErrorCode::Parse,
                fmt::format("line {}: gamma must decrease within a layer", i + 1));
        samples.push_back(s);
    }
    return curves;
}

// ---------------------------------------------------------------------------

std::string cost_to_csv(const CostReport& report) {
    std::string out =
        "layer,role,rank_in,rank_out,out_h,out_w,params_original,params,flops_original,flops,params_x1e4,"
        "flops_x1e8,params_reduction_pct,flops_reduction_pct\n";
    for (const LayerCost* l : table_order(report)) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", l->layer,
                           l->role == LayerRole::Main ? "main" : "shortcut", l->rank_in, l->rank_out, l->out_h,
                           l->out_w, l->params_original, l->params_decomposed, l->flops_original,
                           l->flops_decomposed, format_scaled(l->params_decomposed, 4),
                           format_scaled(l->flops_decomposed, 8),
                           reduction(l->params_original, l->params_decomposed),
                           reduction(l->flops_original, l->flops_decomposed));
    }
    const auto& t = report.totals;
    const Count p0 = report.baseline ? report.baseline->params_decomposed : t.params_original;
    const Count f0 = report.baseline ? report.baseline->flops_decomposed : t.flops_original;
    out += fmt::format("total,,,,,,{},{},{},{},{},{},{},{}\n", p0, t.params_decomposed, f0, t.flops_decomposed,
                       format_scaled(t.params_decomposed, 4), format_scaled(t.flops_decomposed, 8),
                       reduction(p0, t.params_decomposed), reduction(f0, t.flops_decomposed));
    return out;
}

std::string cost_to_table(const CostReport& report) {
    std::string out;
    out += fmt::format("{:<8} {:>4} {:>4} {:>14} {:>14}\n", "layer", "I", "O", "params(x1e4)", "FLOPs(x1e8)");
    auto rank = [](Count r) { return r == 0 ? std::string("-") : std::to_string(r); };
    for (const LayerCost* l : table_order(report)) {
        out += fmt::format("{:<8} {:>4} {:>4} {:>14} {:>14}\n", l->layer, rank(l->rank_in), rank(l->rank_out),
                           format_scaled(l->params_decomposed, 4), format_scaled(l->flops_decomposed, 8));
    }
    const auto& t = report.totals;
    out += fmt::format("{:<8} {:>4} {:>4} {:>14} {:>14}\n", "total", "", "", format_scaled(t.params_decomposed, 4),
                       format_scaled(t.flops_decomposed, 8));
    const Count p0 = report.baseline ? report.baseline->params_decomposed : t.params_original;
    const Count f0 = report.baseline ? report.baseline->flops_decomposed : t.flops_original;
    out += fmt::format("{} params {} -> {} ({}% reduction), FLOPs {} -> {} ({}% reduction)\n",
                       report.baseline ? "vs baseline:" : "vs undecomposed:", p0, t.params_decomposed,
                       reduction(p0, t.params_decomposed), f0, t.flops_decomposed,
                       reduction(f0, t.flops_decomposed));
    return out;
}

std::string decisions_to_table(const std::vector<ChannelDecision>& decisions) {
    std::string out = fmt::format("{:<8} {:>12} {:>12} {:>9} {:>9} {:<16} {:>7} {:>5}\n", "layer", "threshold",
                                  "margin", "cylinder", "ladder", "shape", "clamped", "evals");
    for (const auto& d : decisions) {
        out += fmt::format("{:<8} {:>12.6g} {:>12.6g} {:>9} {:>9} {:<16} {:>7} {:>5}\n", d.layer, d.threshold,
                           d.margin, fmt::format("{}x{}", d.cylinder.in, d.cylinder.out),
                           fmt::format("{}x{}", d.ladder.in, d.ladder.out), to_string(d.ladder_kind),
                           d.clamped ? "yes" : "no", d.evaluations);
    }
    return out;
}

std::string search_report(const ArchitectureResult& result) {
    std::string out = "channel decisions\n";
    out += decisions_to_table(result.decisions);
    out += "\ncylinder variant\n";
    out += cost_to_table(result.cylinder_cost);
    out += "\nladder variant\n";
    out += cost_to_table(result.ladder_cost);
    return out;
}

// ---------------------------------------------------------------------------

FeatureBatch synthetic_batch(std::size_t batch, std::size_t height, std::size_t width, std::uint64_t seed) {
    Rng rng(seed);
    return FeatureBatch(rng.normal_tensor({batch, 1, height, width}));
}

FeatureBatch load_batch(const std::string& source, std::uint64_t default_seed) {
    constexpr std::string_view prefix = "synthetic:";
    if (source.rfind(prefix, 0) == 0) {
        const auto parts = split(std::string_view(source).substr(prefix.size()), ':');
        require(parts.size() == 1 || parts.size() == 2, ErrorCode::Parse,
                "synthetic batch spec must be synthetic:BxHxW[:seed]");
        const auto dims = split(parts[0], 'x');
        require(dims.size() == 3, ErrorCode::Parse, "synthetic batch spec must be synthetic:BxHxW[:seed]");
        std::uint64_t seed = default_seed;
        if (parts.size() == 2) {
            auto [ptr, ec] = std::from_chars(parts[1].data(), parts[1].data() + parts[1].size(), seed);
            require(ec == std::errc{} && ptr == parts[1].data() + parts[1].size(), ErrorCode::Parse,
                    fmt::format("bad seed '{}' in batch spec", parts[1]));
        }
        return synthetic_batch(parse_size(dims[0], "batch size"), parse_size(dims[1], "height"),
                               parse_size(dims[2], "width"), seed);
    }
    const auto tensors = read_stdt(source);
    auto it = std::find_if(tensors.begin(), tensors.end(), [](const NamedTensor& t) { return t.name == "batch"; });
    require(it != tensors.end(), ErrorCode::NotFound, source + ": no tensor named 'batch'");
    require(it->tensor.rank() == 4, ErrorCode::DimMismatch,
            source + ": batch tensor must be B x C x H x W, got " + shape_string(it->tensor.shape()));
    return FeatureBatch(it->tensor);
}

}  // namespace tkc
