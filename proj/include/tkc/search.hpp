#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tkc/convnet.hpp"
#include "tkc/cost_model.hpp"
#include "tkc/tucker.hpp"

namespace tkc {

enum class ThresholdPolicy { Manual, Knee };

/// Which configuration a decrement loop reports once the distortion first exceeds its bound:
/// the exceeding one (Literal) or the one just before it (StepBack).
enum class ExitRule { Literal, StepBack };

struct SearchConfig {
    double epsilon = 0.05;  // shrinking-rate step
    double tau = 0.20;      // lowest shrinking rate visited
    /// Start rate per layer group; layers outside every group use default_start_gamma.
    std::map<std::string, double> start_gamma{{"bottom", 0.50}, {"middle", 0.30}};
    double default_start_gamma = 0.50;

    double margin = 0.05;         // distortion margin for the ladder cycles
    bool margin_relative = true;  // margin = margin * threshold when true

    FeatureBatch batch;  // unlabeled images, B >= 2
    std::size_t repeats = 1;  // independent sub-batches per sample; their distortions are averaged

    ThresholdPolicy policy = ThresholdPolicy::Knee;
    std::map<std::string, double> manual_thresholds;
    ExitRule exit_rule = ExitRule::Literal;
    bool record_curves = false;  // traverse even when thresholds are manual

    TuckerOptions tucker;
    std::size_t threads = 0;           // 0: STD_NET_THREADS, else all cores
    std::vector<std::string> layers;   // empty: every decomposable layer in declaration order

    [[nodiscard]] double start_for(const ModelSpec& model, const std::string& layer) const;
    [[nodiscard]] double margin_for(double threshold) const;
    /// Throws ErrorCode::Config naming the violated constraint.
    void validate(const ModelSpec& model) const;
};

struct DistortionSample {
    double gamma = 0.0;
    std::size_t rank_in = 0;
    std::size_t rank_out = 0;
    double distortion = 0.0;
};

struct DistortionCurve {
    std::string layer;
    std::vector<DistortionSample> samples;  // gamma strictly decreasing
};

struct RankPair {
    std::size_t in = 0;
    std::size_t out = 0;
    bool operator==(const RankPair&) const = default;
};

enum class ShapeKind { Cylinder, Ladder, InheritedLadder };
std::string_view to_string(ShapeKind kind);

struct ChannelDecision {
    std::string layer;
    double threshold = 0.0;
    double margin = 0.0;
    RankPair cylinder;
    RankPair ladder;
    ShapeKind cylinder_kind = ShapeKind::Cylinder;
    ShapeKind ladder_kind = ShapeKind::Ladder;
    bool clamped = false;  // a loop hit a rank bound before its distortion bound
    std::size_t evaluations = 0;
};

struct ArchitectureResult {
    std::vector<DistortionCurve> curves;
    std::vector<ChannelDecision> decisions;
    ModelSpec cylinder_model;
    ModelSpec ladder_model;
    CostReport cylinder_cost;
    CostReport ladder_cost;

    [[nodiscard]] const ChannelDecision& decision(const std::string& layer) const;
};

/// Normalized distortion of one layer's batch-normalized output under Tucker
/// replacement. The activation feeding the layer and the reference output are
/// computed once; each query decomposes the kernel at the requested ranks.
class DistortionProbe {
public:
    DistortionProbe(const ModelSpec& model, std::string layer, const FeatureBatch& batch, std::size_t repeats = 1,
                    TuckerOptions tucker = {});

    [[nodiscard]] const std::string& layer() const { return layer_; }
    [[nodiscard]] std::size_t in_channels() const { return conv_.conv.in_channels; }
    [[nodiscard]] std::size_t out_channels() const { return conv_.conv.out_channels; }

    /// Results are memoized per (rank_in, rank_out).
    double operator()(std::size_t rank_in, std::size_t rank_out);

    [[nodiscard]] std::size_t evaluations() const { return evaluations_; }

private:
    std::string layer_;
    Node conv_;
    Node bn_;
    TuckerOptions tucker_;
    std::vector<FeatureBatch> inputs_;
    std::vector<DenseTensor> reference_;
    std::vector<double> reference_norm_;
    std::map<std::pair<std::size_t, std::size_t>, double> memo_;
    std::size_t evaluations_ = 0;
};

double cal_norm_distortion(const ModelSpec& model, const std::string& layer, const FeatureBatch& batch,
                           std::size_t rank_in, std::size_t rank_out, const TuckerOptions& tucker = {});

/// Shrinking rates start, start - eps, ... down to tau (inclusive).
std::vector<double> gamma_schedule(double start, double epsilon, double tau);

/// floor(channels * gamma), at least 1.
std::size_t shrunk_rank(std::size_t channels, double gamma);

DistortionCurve traverse_distortion(DistortionProbe& probe, double start_gamma, double epsilon, double tau);
DistortionCurve traverse_distortion(const ModelSpec& model, const std::string& layer, const SearchConfig& cfg);

double select_threshold(const DistortionCurve& curve, ThresholdPolicy policy,
                        const std::map<std::string, double>& manual = {});

ChannelDecision determine_channels(DistortionProbe& probe, double threshold, double margin,
                                   ExitRule rule = ExitRule::Literal);
ChannelDecision determine_channels(const ModelSpec& model, const std::string& layer, const SearchConfig& cfg,
                                   double threshold);

/// Traversal of every configured layer (cfg.layers, or all decomposable layers), in declaration order.
std::vector<DistortionCurve> traverse_model(const ModelSpec& model, const SearchConfig& cfg);

ArchitectureResult search_architecture(const ModelSpec& model, const SearchConfig& cfg);

/// Replace every decided layer by its Tucker factors at the chosen ranks.
ModelSpec assemble(const ModelSpec& model, const std::vector<ChannelDecision>& decisions, bool ladder,
                   const TuckerOptions& tucker = {});

/// Worker count: explicit value, else STD_NET_THREADS, else hardware concurrency.
std::size_t resolve_thread_count(std::size_t requested);

}  // namespace tkc
