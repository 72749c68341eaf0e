#include "tkc/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

#include <fmt/format.h>

namespace tkc {

namespace {

constexpr double kGridSlack = 1e-9;
constexpr double kCurvatureTie = 1e-12;

}  // namespace

std::string_view to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Cylinder: return "cylinder";
        case ShapeKind::Ladder: return "ladder";
        case ShapeKind::InheritedLadder: return "inherited-ladder";
    }
    return "unknown";
}

double SearchConfig::start_for(const ModelSpec& model, const std::string& layer) const {
    if (auto group = model.group_of(layer)) {
        auto it = start_gamma.find(*group);
        if (it != start_gamma.end()) return it->second;
    }
    return default_start_gamma;
}

double SearchConfig::margin_for(double threshold) const {
    return margin_relative ? margin * std::max(threshold, 0.0) : margin;
}

void SearchConfig::validate(const ModelSpec& model) const {
    require(epsilon > 0.0 && epsilon < 1.0, ErrorCode::Config,
            fmt::format("epsilon must satisfy 0 < epsilon < 1, got {}", epsilon));
    require(tau > 0.0, ErrorCode::Config, fmt::format("tau must be > 0, got {}", tau));
    require(margin >= 0.0, ErrorCode::Config, fmt::format("margin must be >= 0, got {}", margin));
    require(repeats >= 1, ErrorCode::Config, "repeats must be >= 1");
    require(batch.tensor().rank() == 4, ErrorCode::Config, "search batch is missing");
    require(batch.batch() >= 2 * repeats, ErrorCode::Config,
            fmt::format("batch of {} images cannot be split into {} sub-batches of at least 2", batch.batch(),
                        repeats));
    auto check_start = [&](const std::string& what, double start) {
        require(start <= 1.0, ErrorCode::Config, fmt::format("{} start rate {} exceeds 1", what, start));
        require(tau <= start, ErrorCode::Config,
                fmt::format("tau ({}) must not exceed the {} start rate ({})", tau, what, start));
    };
    const std::vector<std::string> targets = layers.empty() ? model.decomposable_layers() : layers;
    for (const auto& layer : targets) check_start("layer " + layer, start_for(model, layer));
}

const ChannelDecision& ArchitectureResult::decision(const std::string& layer) const {
    for (const auto& d : decisions)
        if (d.layer == layer) return d;
    raise(ErrorCode::NotFound, "no decision for layer '" + layer + "'");
}

// ---------------------------------------------------------------------------

DistortionProbe::DistortionProbe(const ModelSpec& model, std::string layer, const FeatureBatch& batch,
                                 std::size_t repeats, TuckerOptions tucker)
    : layer_(std::move(layer)), tucker_(tucker) {
    auto index = model.find(layer_);
    if (!index) raise(ErrorCode::NotFound, "no layer named '" + layer_ + "'");
    conv_ = model.node(*index);
    require(conv_.kind == NodeKind::Conv, ErrorCode::Policy, "layer '" + layer_ + "' is not a plain convolution");
    require(conv_.conv.decomposable, ErrorCode::Policy, "layer '" + layer_ + "' is marked non-decomposable");
    bn_ = model.node(*index + 1);
    require(repeats >= 1 && batch.batch() >= 2 * repeats, ErrorCode::InvalidArgument,
            "batch too small for the requested number of sub-batches");

    // Each sub-batch is an independent trial, batch statistics included.
    const std::size_t per = batch.batch() / repeats;
    for (std::size_t r = 0; r < repeats; ++r) {
        const std::size_t count = r + 1 == repeats ? batch.batch() - per * r : per;
        FeatureBatch part = layer_input(model, repeats == 1 ? batch : batch.slice(per * r, count), layer_);
        FeatureBatch ref = batch_norm(apply_conv_like(conv_, part), bn_.scale, bn_.shift, bn_.eps);
        const double norm = frobenius_norm(ref.tensor());
        require(norm > 0.0, ErrorCode::DegenerateInput,
                "layer '" + layer_ + "': batch-normalized output is zero, normalized distortion undefined");
        inputs_.push_back(std::move(part));
        reference_norm_.push_back(norm);
        reference_.push_back(std::move(ref.tensor()));
    }
}

double DistortionProbe::operator()(std::size_t rank_in, std::size_t rank_out) {
    const auto key = std::make_pair(rank_in, rank_out);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;

    TuckerFactors factors;
    try {
        factors = tucker_decompose(conv_.kernel, rank_in, rank_out, tucker_);
    } catch (const Error& e) {
        throw Error(e.code(), "layer '" + layer_ + "': " + e.what());
    }
    double total = 0.0;
    for (std::size_t r = 0; r < inputs_.size(); ++r) {
        const FeatureBatch approx = batch_norm(decomposed_forward(inputs_[r], factors, conv_.conv.stride,
                                                                  conv_.conv.padding),
                                               bn_.scale, bn_.shift, bn_.eps);
        total += frobenius_norm(reference_[r] - approx.tensor()) / reference_norm_[r];
    }
    const double value = total / static_cast<double>(inputs_.size());
    ++evaluations_;
    memo_.emplace(key, value);
    return value;
}

double cal_norm_distortion(const ModelSpec& model, const std::string& layer, const FeatureBatch& batch,
                           std::size_t rank_in, std::size_t rank_out, const TuckerOptions& tucker) {
    DistortionProbe probe(model, layer, batch, 1, tucker);
    return probe(rank_in, rank_out);
}

// ---------------------------------------------------------------------------

std::vector<double> gamma_schedule(double start, double epsilon, double tau) {
    require(epsilon > 0.0 && epsilon < 1.0, ErrorCode::Config, "epsilon must satisfy 0 < epsilon < 1");
    require(tau > 0.0 && tau <= start && start <= 1.0, ErrorCode::Config,
            fmt::format("need 0 < tau <= start <= 1, got tau = {}, start = {}", tau, start));
    const auto steps = static_cast<std::size_t>(std::floor((start - tau) / epsilon + kGridSlack)) + 1;
    std::vector<double> gammas;
    gammas.reserve(steps);
    for (std::size_t k = 0; k < steps; ++k) gammas.push_back(start - static_cast<double>(k) * epsilon);
    return gammas;
}

std::size_t shrunk_rank(std::size_t channels, double gamma) {
    const auto r = static_cast<std::size_t>(std::floor(static_cast<double>(channels) * gamma + kGridSlack));
    return std::clamp<std::size_t>(r, 1, channels);
}

DistortionCurve traverse_distortion(DistortionProbe& probe, double start_gamma, double epsilon, double tau) {
    DistortionCurve curve;
    curve.layer = probe.layer();
    for (double gamma : gamma_schedule(start_gamma, epsilon, tau)) {
        DistortionSample s;
        s.gamma = gamma;
        s.rank_in = shrunk_rank(probe.in_channels(), gamma);
        s.rank_out = shrunk_rank(probe.out_channels(), gamma);
        try {
            s.distortion = probe(s.rank_in, s.rank_out);
        } catch (const Error& e) {
            throw Error(e.code(), fmt::format("{} (shrinking rate {})", e.what(), gamma));
        }
        curve.samples.push_back(s);
    }
    return curve;
}

DistortionCurve traverse_distortion(const ModelSpec& model, const std::string& layer, const SearchConfig& cfg) {
    DistortionProbe probe(model, layer, cfg.batch, cfg.repeats, cfg.tucker);
    return traverse_distortion(probe, cfg.start_for(model, layer), cfg.epsilon, cfg.tau);
}

double select_threshold(const DistortionCurve& curve, ThresholdPolicy policy,
                        const std::map<std::string, double>& manual) {
    if (policy == ThresholdPolicy::Manual) {
        auto it = manual.find(curve.layer);
        if (it == manual.end()) raise(ErrorCode::Config, "no manual threshold for layer '" + curve.layer + "'");
        return it->second;
    }
    const auto& s = curve.samples;
    require(!s.empty(), ErrorCode::InvalidArgument, "empty distortion curve for layer '" + curve.layer + "'");
    if (s.size() < 3) return s.front().distortion;

    std::size_t best = 0;
    double best_curvature = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 2 < s.size(); ++i) {
        const double curvature = s[i + 2].distortion - 2.0 * s[i + 1].distortion + s[i].distortion;
        if (curvature > best_curvature + kCurvatureTie) {
            best_curvature = curvature;
            best = i;
        }
    }
    if (best_curvature <= kCurvatureTie) return s.front().distortion;
    return s[best + 1].distortion;
}

// ---------------------------------------------------------------------------

namespace {

struct CycleOutcome {
    RankPair ranks;
    bool clamped = false;
};

// Walk (I, O) by (delta_in, delta_out) until the distortion exceeds `bound` or the walk leaves the rank box.
CycleOutcome walk(DistortionProbe& probe, RankPair start, long delta_in, long delta_out, double bound,
                  ExitRule rule) {
    const long max_in = static_cast<long>(probe.in_channels());
    const long max_out = static_cast<long>(probe.out_channels());
    const bool trade = delta_in * delta_out < 0;
    long in = static_cast<long>(start.in), out = static_cast<long>(start.out);
    RankPair last_within = start;
    bool clamped = false;
    while (true) {
        const long raw_in = in + delta_in, raw_out = out + delta_out;
        const bool hit = raw_in < 1 || raw_in > max_in || raw_out < 1 || raw_out > max_out;
        const long next_in = std::clamp(raw_in, 1L, max_in);
        const long next_out = std::clamp(raw_out, 1L, max_out);
        // A trading cycle cannot move one side alone; a shrinking walk keeps shrinking the other side.
        if ((hit && trade) || (next_in == in && next_out == out)) {
            return {{static_cast<std::size_t>(in), static_cast<std::size_t>(out)}, true};
        }
        clamped = clamped || hit;
        in = next_in;
        out = next_out;
        const RankPair current{static_cast<std::size_t>(in), static_cast<std::size_t>(out)};
        if (probe(current.in, current.out) > bound) {
            return {rule == ExitRule::Literal ? current : last_within, clamped};
        }
        last_within = current;
    }
}

}  // namespace

ChannelDecision determine_channels(DistortionProbe& probe, double threshold, double margin, ExitRule rule) {
    ChannelDecision d;
    d.layer = probe.layer();
    d.threshold = threshold;
    d.margin = margin;

    const std::size_t jin = probe.in_channels(), jout = probe.out_channels();
    long step_in = 1, step_out = 1;
    if (jin < jout) {
        step_out = static_cast<long>(jout / jin);
    } else {
        step_in = static_cast<long>(jin / jout);
    }

    const CycleOutcome reduced = walk(probe, {jin, jout}, -step_in, -step_out, threshold, rule);
    d.clamped = reduced.clamped;
    d.cylinder = reduced.ranks;

    if (jin != jout) {
        d.ladder = d.cylinder;
        d.cylinder_kind = ShapeKind::InheritedLadder;
        d.ladder_kind = ShapeKind::InheritedLadder;
        d.evaluations = probe.evaluations();
        return d;
    }

    const double bound = threshold + margin;
    const CycleOutcome fewer_in = walk(probe, d.cylinder, -1, +1, bound, rule);
    const CycleOutcome more_in = walk(probe, d.cylinder, +1, -1, bound, rule);
    d.clamped = d.clamped || fewer_in.clamped || more_in.clamped;
    if (fewer_in.ranks.in * fewer_in.ranks.out < more_in.ranks.in * more_in.ranks.out) {
        d.ladder = fewer_in.ranks;
    } else {
        d.ladder = more_in.ranks;
    }
    d.cylinder_kind = ShapeKind::Cylinder;
    d.ladder_kind = ShapeKind::Ladder;
    d.evaluations = probe.evaluations();
    return d;
}

ChannelDecision determine_channels(const ModelSpec& model, const std::string& layer, const SearchConfig& cfg,
                                   double threshold) {
    DistortionProbe probe(model, layer, cfg.batch, cfg.repeats, cfg.tucker);
    return determine_channels(probe, threshold, cfg.margin_for(threshold), cfg.exit_rule);
}

// ---------------------------------------------------------------------------

std::size_t resolve_thread_count(std::size_t requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("STD_NET_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

ModelSpec assemble(const ModelSpec& model, const std::vector<ChannelDecision>& decisions, bool ladder,
                   const TuckerOptions& tucker) {
    ModelSpec out = model;
    for (const auto& d : decisions) {
        const RankPair r = ladder ? d.ladder : d.cylinder;
        const Node& node = model.node(d.layer);
        out = replace_layer(out, d.layer, tucker_decompose(node.kernel, r.in, r.out, tucker));
    }
    return out;
}

namespace {

// Runs fn(i) for every layer on a small worker pool. Per-layer failures are collected and
// reported together, except a degenerate batch, which is rethrown as is.
template <typename Fn>
void run_per_layer(const std::vector<std::string>& layers, std::size_t threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(layers.size());
    auto run = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    const std::size_t workers = std::min(resolve_thread_count(threads), std::max<std::size_t>(layers.size(), 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < layers.size(); ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < layers.size(); i = next++) run(i);
            });
        }
    }

    std::string failures;
    std::optional<ErrorCode> first_code;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::DegenerateInput) throw;
            if (!first_code) first_code = e.code();
            failures += fmt::format("\n  {}: {}", layers[i], e.what());
        } catch (const std::exception& e) {
            if (!first_code) first_code = ErrorCode::Numerical;
            failures += fmt::format("\n  {}: {}", layers[i], e.what());
        }
    }
    if (first_code) raise(*first_code, "failed for:" + failures);
}

}  // namespace

std::vector<DistortionCurve> traverse_model(const ModelSpec& model, const SearchConfig& cfg) {
    cfg.validate(model);
    const std::vector<std::string> layers = cfg.layers.empty() ? model.decomposable_layers() : cfg.layers;
    std::vector<DistortionCurve> curves(layers.size());
    run_per_layer(layers, cfg.threads, [&](std::size_t i) {
        DistortionProbe probe(model, layers[i], cfg.batch, cfg.repeats, cfg.tucker);
        curves[i] = traverse_distortion(probe, cfg.start_for(model, layers[i]), cfg.epsilon, cfg.tau);
    });
    return curves;
}

ArchitectureResult search_architecture(const ModelSpec& model, const SearchConfig& cfg) {
    cfg.validate(model);
    const std::vector<std::string> layers = cfg.layers.empty() ? model.decomposable_layers() : cfg.layers;
    const bool traverse = cfg.policy == ThresholdPolicy::Knee || cfg.record_curves;

    std::vector<std::optional<DistortionCurve>> curves(layers.size());
    std::vector<std::optional<ChannelDecision>> decisions(layers.size());
    run_per_layer(layers, cfg.threads, [&](std::size_t i) {
        DistortionProbe probe(model, layers[i], cfg.batch, cfg.repeats, cfg.tucker);
        if (traverse) curves[i] = traverse_distortion(probe, cfg.start_for(model, layers[i]), cfg.epsilon, cfg.tau);
        const double threshold =
            cfg.policy == ThresholdPolicy::Knee
                ? select_threshold(*curves[i], ThresholdPolicy::Knee)
                : select_threshold(DistortionCurve{layers[i], {}}, ThresholdPolicy::Manual, cfg.manual_thresholds);
        decisions[i] = determine_channels(probe, threshold, cfg.margin_for(threshold), cfg.exit_rule);
    });

    ArchitectureResult result;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (curves[i]) result.curves.push_back(std::move(*curves[i]));
        result.decisions.push_back(std::move(*decisions[i]));
    }
    result.cylinder_model = assemble(model, result.decisions, false, cfg.tucker);
    result.ladder_model = assemble(model, result.decisions, true, cfg.tucker);
    result.cylinder_cost = cost_report(result.cylinder_model, model);
    result.ladder_cost = cost_report(result.ladder_model, model);
    return result;
}

}  // namespace tkc
