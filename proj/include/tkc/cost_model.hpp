#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tkc/convnet.hpp"

namespace tkc {

using Count = std::uint64_t;

// Parameter and FLOP counts for one conv layer. Biases are not counted.

Count layer_params(Count in_channels, Count out_channels, Count kernel_size);

/// J_in*I + I*O*D*D + O*J_out for the three-stage decomposed group.
Count decomposed_params(Count in_channels, Count out_channels, Count kernel_size, Count rank_in, Count rank_out);

Count layer_flops(Count params, Count out_h, Count out_w);

/// Largest shrinking rate at which decomposition still pays off for equal channel
/// counts and I = O = gamma*J: positive root of n*g^2 + 2g - n = 0, n = D*D.
double shrink_threshold(double kernel_area);

/// Relative complexity cut 1 - (n g^2 + 2g)/n.
double reduction_fraction(double kernel_area, double gamma);

/// Share of the complexity cut consumed by the re-expanding 1x1 stage: g/(n - n g^2 - 2g).
double step3_fraction(double kernel_area, double gamma);

/// decomposed params of an (I, O) core over those of the cylinder core with the same I+O.
double ladder_vs_cylinder_ratio(Count channels, Count kernel_area, Count rank_in, Count rank_out);

// Depthwise-separable block (depthwise D x D, then pointwise J_in -> J_out).
Count ds_params(Count in_channels, Count out_channels, Count kernel_size);
/// Tucker applied to the depthwise kernel: J_in*I + I*O*D*D + O + J_in*J_out.
Count ds_decomposed_params(Count in_channels, Count out_channels, Count kernel_size, Count rank_in, Count rank_out);
/// Positive root of n x g^2 + (x+1) g - n = 0.
double ds_shrink_threshold(double kernel_area, double channels);

struct LayerCost {
    std::string layer;
    Count params_original = 0;
    Count params_decomposed = 0;
    Count flops_original = 0;
    Count flops_decomposed = 0;
    Count out_h = 0;
    Count out_w = 0;
    LayerRole role = LayerRole::Main;
    bool decomposed = false;
    Count rank_in = 0;  // 0 when not decomposed
    Count rank_out = 0;
};

struct CostTotals {
    Count params_original = 0;
    Count params_decomposed = 0;
    Count flops_original = 0;
    Count flops_decomposed = 0;
};

struct CostReport {
    std::string model_name;
    std::vector<LayerCost> layers;
    CostTotals totals;
    /// Totals of the baseline model (its current form), when one was given.
    std::optional<CostTotals> baseline;

    [[nodiscard]] const LayerCost& layer(const std::string& name) const;
};

CostReport cost_report(const ModelSpec& model, const std::optional<ModelSpec>& baseline = std::nullopt);

/// Current parameter count of a model (decomposed form where applicable).
Count model_params(const ModelSpec& model);
Count model_flops(const ModelSpec& model);

/// value / 10^scale_exp truncated towards zero to two decimals, e.g. (576, 4) -> "0.05".
std::string format_scaled(Count value, int scale_exp);

/// 100 * part / whole rendered with two decimals, rounded half-up.
std::string format_percent(Count part, Count whole);

}  // namespace tkc
