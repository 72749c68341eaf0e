#include "tkc/cost_model.hpp"

#include <cmath>

#include <fmt/format.h>

namespace tkc {

Count layer_params(Count in_channels, Count out_channels, Count kernel_size) {
    return in_channels * out_channels * kernel_size * kernel_size;
}

Count decomposed_params(Count in_channels, Count out_channels, Count kernel_size, Count rank_in, Count rank_out) {
    require(rank_in >= 1 && rank_in <= in_channels && rank_out >= 1 && rank_out <= out_channels,
            ErrorCode::InvalidArgument,
            fmt::format("core ranks ({}, {}) outside [1, {}] x [1, {}]", rank_in, rank_out, in_channels,
                        out_channels));
    return in_channels * rank_in + rank_in * rank_out * kernel_size * kernel_size + rank_out * out_channels;
}

Count layer_flops(Count params, Count out_h, Count out_w) { return params * out_h * out_w; }

double shrink_threshold(double kernel_area) {
    require(kernel_area >= 1.0, ErrorCode::Domain, "kernel area must be >= 1");
    return (-1.0 + std::sqrt(1.0 + kernel_area * kernel_area)) / kernel_area;
}

double reduction_fraction(double kernel_area, double gamma) {
    require(kernel_area >= 1.0, ErrorCode::Domain, "kernel area must be >= 1");
    require(gamma >= 0.0 && gamma <= 1.0, ErrorCode::Domain, "shrinking rate must lie in [0, 1]");
    return 1.0 - (kernel_area * gamma * gamma + 2.0 * gamma) / kernel_area;
}

double step3_fraction(double kernel_area, double gamma) {
    const double denom = kernel_area - kernel_area * gamma * gamma - 2.0 * gamma;
    // denom / n is the complexity cut itself; within 1e-3 of zero the ratio is meaningless
    require(denom / kernel_area > 1e-3, ErrorCode::Domain,
            fmt::format("shrinking rate {} is outside the cost-reduction region for n = {}", gamma, kernel_area));
    return gamma / denom;
}

double ladder_vs_cylinder_ratio(Count channels, Count kernel_area, Count rank_in, Count rank_out) {
    require((rank_in + rank_out) % 2 == 0, ErrorCode::InvalidArgument,
            fmt::format("I + O = {} must be even for a cylinder comparison", rank_in + rank_out));
    require(rank_in >= 1 && rank_out >= 1 && rank_in <= channels && rank_out <= channels,
            ErrorCode::InvalidArgument, "ranks out of range");
    const Count half = (rank_in + rank_out) / 2;
    auto params = [&](Count i, Count o) { return channels * i + i * o * kernel_area + o * channels; };
    return static_cast<double>(params(rank_in, rank_out)) / static_cast<double>(params(half, half));
}

Count ds_params(Count in_channels, Count out_channels, Count kernel_size) {
    return in_channels * kernel_size * kernel_size + in_channels * out_channels;
}

Count ds_decomposed_params(Count in_channels, Count out_channels, Count kernel_size, Count rank_in, Count rank_out) {
    return in_channels * rank_in + rank_in * rank_out * kernel_size * kernel_size + rank_out +
           in_channels * out_channels;
}

double ds_shrink_threshold(double kernel_area, double channels) {
    require(kernel_area >= 1.0 && channels >= 1.0, ErrorCode::Domain, "n and x must be >= 1");
    const double n = kernel_area, x = channels;
    const double root = (-(x + 1.0) + std::sqrt((x + 1.0) * (x + 1.0) + 4.0 * n * n * x)) / (2.0 * n * x);
    require(root <= 1.0 / std::sqrt(x) + 1e-12, ErrorCode::Numerical, "threshold exceeds the 1/sqrt(x) bound");
    return root;
}

const LayerCost& CostReport::layer(const std::string& name) const {
    for (const auto& l : layers)
        if (l.layer == name) return l;
    raise(ErrorCode::NotFound, "cost report has no layer '" + name + "'");
}

CostReport cost_report(const ModelSpec& model, const std::optional<ModelSpec>& baseline) {
    CostReport report;
    report.model_name = model.metadata().name;
    for (std::size_t i = 0; i < model.size(); ++i) {
        const Node& n = model.node(i);
        if (!n.is_conv_like()) continue;
        const auto& g = n.conv;
        LayerCost row;
        row.layer = n.name;
        row.out_h = g.out_h;
        row.out_w = g.out_w;
        row.role = g.role;
        row.params_original = layer_params(g.in_channels, g.out_channels, g.kernel_size);
        row.params_decomposed = row.params_original;
        if (n.kind == NodeKind::DecomposedGroup) {
            row.decomposed = true;
            row.rank_in = n.factors->rank_in();
            row.rank_out = n.factors->rank_out();
            row.params_decomposed =
                decomposed_params(g.in_channels, g.out_channels, g.kernel_size, row.rank_in, row.rank_out);
        }
        row.flops_original = layer_flops(row.params_original, g.out_h, g.out_w);
        row.flops_decomposed = layer_flops(row.params_decomposed, g.out_h, g.out_w);

        report.totals.params_original += row.params_original;
        report.totals.params_decomposed += row.params_decomposed;
        report.totals.flops_original += row.flops_original;
        report.totals.flops_decomposed += row.flops_decomposed;
        report.layers.push_back(std::move(row));
    }
    if (baseline) report.baseline = cost_report(*baseline).totals;
    return report;
}

Count model_params(const ModelSpec& model) { return cost_report(model).totals.params_decomposed; }
Count model_flops(const ModelSpec& model) { return cost_report(model).totals.flops_decomposed; }

std::string format_scaled(Count value, int scale_exp) {
    require(scale_exp >= 2, ErrorCode::InvalidArgument, "scale exponent must be >= 2");
    Count divisor = 1;
    for (int i = 0; i < scale_exp - 2; ++i) divisor *= 10;
    const Count hundredths = value / divisor;
    return fmt::format("{}.{:02}", hundredths / 100, hundredths % 100);
}

std::string format_percent(Count part, Count whole) {
    require(whole > 0, ErrorCode::Domain, "percentage of a zero total");
    // hundredths of a percent, half-up: floor((2 * 10000 * part + whole) / (2 * whole))
    const unsigned __int128 num = static_cast<unsigned __int128>(part) * 20000u + whole;
    const Count hundredths = static_cast<Count>(num / (static_cast<unsigned __int128>(whole) * 2u));
    return fmt::format("{}.{:02}", hundredths / 100, hundredths % 100);
}

}  // namespace tkc
