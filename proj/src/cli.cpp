#include "tkc/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "tkc/io.hpp"
#include "tkc/search.hpp"

namespace tkc {

namespace {

constexpr double kEquivalenceTol = 1e-8;
constexpr double kBnTol = 1e-6;

/// A model file, or "srnetc64[:seed]" for a freshly built network.
ModelSpec open_model(const std::string& source) {
    constexpr std::string_view builtin = "srnetc64";
    if (source.rfind(builtin, 0) == 0 && (source.size() == builtin.size() || source[builtin.size()] == ':')) {
        std::uint64_t seed = 0;
        if (source.size() > builtin.size()) {
            const std::string digits = source.substr(builtin.size() + 1);
            require(!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit), ErrorCode::Parse,
                    "bad seed in '" + source + "'");
            seed = std::stoull(digits);
        }
        return build_srnetc64(seed);
    }
    return load_model(source);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

struct SearchFlags {
    std::string model, batch;
    std::uint64_t seed = 0;
    double epsilon = 0.05, tau = 0.20, start_bottom = 0.50, start_middle = 0.30, start_default = 0.50;
    std::size_t repeats = 1, threads = 0, tucker_iters = 3;
    std::string layers;

    void add_to(CLI::App* app) {
        app->add_option("--model", model, "model file, or srnetc64[:seed]")->required();
        app->add_option("--batch", batch, "STDT file with a 'batch' tensor, or synthetic:BxHxW[:seed]")->required();
        app->add_option("--seed", seed, "seed for synthetic batches that do not name one");
        app->add_option("--epsilon", epsilon, "shrinking-rate step");
        app->add_option("--tau", tau, "lowest shrinking rate");
        app->add_option("--start-bottom", start_bottom, "start rate for the 'bottom' layer group");
        app->add_option("--start-middle", start_middle, "start rate for the 'middle' layer group");
        app->add_option("--start-default", start_default, "start rate for layers outside every group");
        app->add_option("--repeats", repeats, "sub-batches averaged per distortion sample");
        app->add_option("--threads", threads, "worker threads (default: STD_NET_THREADS, else all cores)");
        app->add_option("--tucker-iters", tucker_iters, "HOOI refinement sweeps");
        app->add_option("--layers", layers, "comma-separated layer subset");
    }

    SearchConfig config(const ModelSpec& m) const {
        SearchConfig cfg;
        cfg.epsilon = epsilon;
        cfg.tau = tau;
        cfg.start_gamma = {{"bottom", start_bottom}, {"middle", start_middle}};
        cfg.default_start_gamma = start_default;
        cfg.repeats = repeats;
        cfg.threads = threads;
        cfg.tucker.refine_iters = tucker_iters;
        cfg.layers = split_list(layers);
        cfg.batch = load_batch(batch, seed);
        for (const auto& l : cfg.layers) {
            const Node& n = m.node(l);
            require(n.kind == NodeKind::Conv && n.conv.decomposable, ErrorCode::Policy,
                    "layer '" + l + "' is not a decomposable convolution");
        }
        return cfg;
    }
};

void note(const std::string& msg) { std::fputs((msg + "\n").c_str(), stderr); }

// ---------------------------------------------------------------------------

int run_build(std::uint64_t seed, const std::string& out, const std::string& dtype) {
    require(dtype == "f64" || dtype == "f32", ErrorCode::Config, "--dtype must be f32 or f64");
    save_model(build_srnetc64(seed), out, dtype == "f32" ? DType::F32 : DType::F64);
    return kExitOk;
}

int run_traverse(const SearchFlags& f, const std::string& out) {
    const ModelSpec model = open_model(f.model);
    const SearchConfig cfg = f.config(model);
    write_file_atomic(out, curves_to_csv(traverse_model(model, cfg)));
    return kExitOk;
}

int run_select(const std::string& curves_path, const std::string& policy, const std::string& manual_path,
               const std::string& out) {
    require(policy == "knee" || policy == "manual", ErrorCode::Config, "--policy must be knee or manual");
    const auto curves = curves_from_csv(read_file(curves_path));
    std::map<std::string, double> manual;
    if (policy == "manual") {
        require(!manual_path.empty(), ErrorCode::Config, "--policy manual needs --thresholds");
        manual = thresholds_from_json(read_file(manual_path));
    }
    std::vector<std::pair<std::string, double>> chosen;
    for (const auto& c : curves) {
        chosen.emplace_back(c.layer, select_threshold(c, policy == "knee" ? ThresholdPolicy::Knee
                                                                         : ThresholdPolicy::Manual,
                                                      manual));
    }
    write_file_atomic(out, thresholds_to_json(chosen));
    return kExitOk;
}

struct SearchOutputs {
    std::string thresholds, exit_rule = "literal", cylinder, ladder, report, curves;
    double margin_rel = 0.05;
    std::optional<double> margin_abs;
};

int run_search(const SearchFlags& f, const SearchOutputs& o) {
    require(o.exit_rule == "literal" || o.exit_rule == "step-back", ErrorCode::Config,
            "--exit-rule must be literal or step-back");
    const ModelSpec model = open_model(f.model);
    SearchConfig cfg = f.config(model);
    if (o.margin_abs) {
        cfg.margin = *o.margin_abs;
        cfg.margin_relative = false;
    } else {
        cfg.margin = o.margin_rel;
    }
    cfg.exit_rule = o.exit_rule == "literal" ? ExitRule::Literal : ExitRule::StepBack;
    if (!o.thresholds.empty()) {
        cfg.policy = ThresholdPolicy::Manual;
        cfg.manual_thresholds = thresholds_from_json(read_file(o.thresholds));
    }
    cfg.record_curves = !o.curves.empty();

    const ArchitectureResult result = search_architecture(model, cfg);
    for (const auto& d : result.decisions) {
        if (d.clamped) note(fmt::format("warning: {}: a rank reached its bound before the distortion bound", d.layer));
    }
    save_model(result.cylinder_model, o.cylinder);
    save_model(result.ladder_model, o.ladder);
    if (!o.report.empty()) write_file_atomic(o.report, search_report(result));
    if (!o.curves.empty()) write_file_atomic(o.curves, curves_to_csv(result.curves));
    return kExitOk;
}

int run_decompose(const std::string& model_path, const std::string& layer, std::size_t rank_in,
                  std::size_t rank_out, std::size_t iters, const std::string& out) {
    const ModelSpec model = open_model(model_path);
    const Node& n = model.node(layer);
    require(n.kind == NodeKind::Conv, ErrorCode::Policy, "layer '" + layer + "' is not a plain convolution");
    TuckerOptions opt;
    opt.refine_iters = iters;
    save_model(replace_layer(model, layer, tucker_decompose(n.kernel, rank_in, rank_out, opt)), out);
    return kExitOk;
}

int run_cost(const std::string& model_path, const std::string& baseline, const std::string& out,
             const std::string& table) {
    const ModelSpec model = open_model(model_path);
    std::optional<ModelSpec> base;
    if (!baseline.empty()) base = open_model(baseline);
    const CostReport report = cost_report(model, base);
    write_file_atomic(out, cost_to_csv(report));
    if (!table.empty()) write_file_atomic(table, cost_to_table(report));
    return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

class Checker {
public:
    void check(bool ok, const std::string& what) {
        ++checks_;
        if (!ok) {
            ++failures_;
            note("FAIL " + what);
        }
    }
    [[nodiscard]] std::size_t failures() const { return failures_; }
    [[nodiscard]] std::size_t checks() const { return checks_; }

private:
    std::size_t checks_ = 0, failures_ = 0;
};

void check_conv(Checker& c, const Node& n, const FeatureBatch& in, const FeatureBatch& out) {
    const auto& g = n.conv;
    const DenseTensor kernel = layer_kernel(n);
    FeatureBatch other;
    std::string what;
    if (n.kind == NodeKind::Conv) {
        if (!g.decomposable) return;
        const auto full = tucker_decompose(n.kernel, g.in_channels, g.out_channels);
        other = decomposed_forward(in, full, g.stride, g.padding);
        what = "full-rank decomposition";
    } else {
        other = conv2d_forward(in, kernel, g.stride, g.padding);
        what = "reconstructed-kernel convolution";
    }
    const double err = relative_error(out.tensor(), other.tensor());
    c.check(err <= kEquivalenceTol, fmt::format("{}: {} differs by {:.3g} (relative)", n.name, what, err));
}

void check_batch_norm(Checker& c, const Node& n, const FeatureBatch& in, const FeatureBatch& out) {
    const std::size_t b = in.batch(), ch = in.channels(), hw = in.height() * in.width();
    const auto x = in.tensor().data();
    const auto y = out.tensor().data();
    for (std::size_t k = 0; k < ch; ++k) {
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
                mx += x[(i * ch + k) * hw + p];
                my += y[(i * ch + k) * hw + p];
            }
        const double count = static_cast<double>(b * hw);
        mx /= count;
        my /= count;
        double vx = 0, vy = 0;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
                vx += std::pow(x[(i * ch + k) * hw + p] - mx, 2);
                vy += std::pow(y[(i * ch + k) * hw + p] - my, 2);
            }
        vx /= count;
        vy /= count;
        const double want_var = n.scale[k] * n.scale[k] * vx / (vx + n.eps);
        c.check(std::abs(my - n.shift[k]) <= kBnTol * std::max(1.0, std::abs(n.shift[k])),
                fmt::format("{}: channel {} mean {:.6g}, expected {:.6g}", n.name, k, my, n.shift[k]));
        c.check(std::abs(vy - want_var) <= kBnTol * std::max(1.0, want_var),
                fmt::format("{}: channel {} variance {:.6g}, expected {:.6g}", n.name, k, vy, want_var));
    }
}

void check_costs(Checker& c, const ModelSpec& model) {
    const CostReport r = cost_report(model);
    CostTotals sum;
    for (const auto& l : r.layers) {
        const Node& n = model.node(l.layer);
        const auto& g = n.conv;
        const Count dense = static_cast<Count>(layer_kernel(n).size());
        c.check(l.params_original == dense, l.layer + ": params do not match the kernel size");
        if (l.decomposed) {
            const auto& f = *n.factors;
            const Count stored = f.core.size() + f.factor_in.data().size() + f.factor_out.data().size();
            c.check(l.params_decomposed == stored, l.layer + ": decomposed params do not match the stored factors");
        }
        c.check(l.flops_decomposed == l.params_decomposed * g.out_h * g.out_w, l.layer + ": FLOPs != params*H*W");
        sum.params_original += l.params_original;
        sum.params_decomposed += l.params_decomposed;
        sum.flops_original += l.flops_original;
        sum.flops_decomposed += l.flops_decomposed;
    }
    c.check(sum.params_original == r.totals.params_original && sum.params_decomposed == r.totals.params_decomposed &&
                sum.flops_original == r.totals.flops_original && sum.flops_decomposed == r.totals.flops_decomposed,
            "cost totals do not equal the per-layer sums");
}

bool finite_weights(const Node& n) {
    auto finite = [](const auto& values) {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    };
    if (n.kind == NodeKind::Conv) return finite(n.kernel.data());
    const auto& f = *n.factors;
    return finite(f.core.data()) && finite(f.factor_in.data()) && finite(f.factor_out.data());
}

int run_verify(const std::string& model_path, const std::string& batch_source, std::uint64_t seed) {
    const ModelSpec model = open_model(model_path);
    const FeatureBatch batch = load_batch(batch_source, seed);
    require(batch.batch() >= 2, ErrorCode::Config, "verification needs a batch of at least 2 images");
    Checker c;
    model.validate();
    const bool nominal = batch.height() == model.metadata().input.height &&
                         batch.width() == model.metadata().input.width;
    forward_visit(model, batch, [&](std::size_t i, const FeatureBatch& in, const FeatureBatch& out) {
        const Node& n = model.node(i);
        for (double v : out.tensor().data()) {
            if (!std::isfinite(v)) {
                c.check(false, n.name + ": non-finite output");
                break;
            }
        }
        if (n.is_conv_like()) {
            if (!finite_weights(n)) {
                c.check(false, n.name + ": non-finite weights");
                return;
            }
            check_conv(c, n, in, out);
            if (nominal) {
                c.check(out.height() == n.conv.out_h && out.width() == n.conv.out_w,
                        fmt::format("{}: output is {}x{}, declared {}x{}", n.name, out.height(), out.width(),
                                    n.conv.out_h, n.conv.out_w));
            }
        } else if (n.kind == NodeKind::BatchNorm) {
            check_batch_norm(c, n, in, out);
        }
    });
    check_costs(c, model);
    if (c.failures() > 0) {
        note(fmt::format("{} of {} checks failed", c.failures(), c.checks()));
        return kExitInvariant;
    }
    note(fmt::format("all {} checks passed", c.checks()));
    return kExitOk;
}

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::Numerical: return kExitNumerical;
        default: return kExitInput;
    }
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"Tucker-based channel search and cost analysis for steganalysis CNNs", "tkc"};
    app.require_subcommand(1);

    std::uint64_t build_seed = 0;
    std::string build_out, build_dtype = "f64";
    auto* build = app.add_subcommand("build", "write a freshly initialized SRNetC64 model");
    build->add_option("--seed", build_seed, "weight seed");
    build->add_option("--out", build_out, "model file (.json)")->required();
    build->add_option("--dtype", build_dtype, "weight storage: f64 or f32");

    SearchFlags trav_flags;
    std::string trav_out;
    auto* traverse = app.add_subcommand("traverse", "distortion curves of every decomposable layer");
    trav_flags.add_to(traverse);
    traverse->add_option("--out", trav_out, "curve CSV")->required();

    std::string sel_curves, sel_policy = "knee", sel_manual, sel_out;
    auto* select = app.add_subcommand("select-thresholds", "pick a distortion threshold per layer");
    select->add_option("--curves", sel_curves, "curve CSV")->required();
    select->add_option("--policy", sel_policy, "knee or manual");
    select->add_option("--thresholds", sel_manual, "manual thresholds (JSON)");
    select->add_option("--out", sel_out, "threshold JSON")->required();

    SearchFlags search_flags;
    SearchOutputs search_out;
    auto* search = app.add_subcommand("search", "determine cylinder and ladder channel numbers");
    search_flags.add_to(search);
    search->add_option("--thresholds", search_out.thresholds, "threshold JSON (default: knee of each curve)");
    auto* rel = search->add_option("--margin-rel", search_out.margin_rel, "margin as a fraction of the threshold");
    auto* abs = search->add_option("--margin-abs", search_out.margin_abs, "absolute distortion margin");
    rel->excludes(abs);
    search->add_option("--exit-rule", search_out.exit_rule, "literal or step-back");
    search->add_option("--out-cylinder", search_out.cylinder, "cylinder model file")->required();
    search->add_option("--out-ladder", search_out.ladder, "ladder model file")->required();
    search->add_option("--report", search_out.report, "text report");
    search->add_option("--curves-out", search_out.curves, "also traverse and write the curves");

    std::string dec_model, dec_layer, dec_out;
    std::size_t dec_in = 0, dec_outr = 0, dec_iters = 3;
    auto* decompose = app.add_subcommand("decompose", "replace one layer by its Tucker factors");
    decompose->add_option("--model", dec_model, "model file, or srnetc64[:seed]")->required();
    decompose->add_option("--layer", dec_layer, "layer name")->required();
    decompose->add_option("--rank-in", dec_in, "input rank I")->required();
    decompose->add_option("--rank-out", dec_outr, "output rank O")->required();
    decompose->add_option("--tucker-iters", dec_iters, "HOOI refinement sweeps");
    decompose->add_option("--out", dec_out, "model file")->required();

    std::string cost_model, cost_base, cost_out, cost_table;
    auto* cost = app.add_subcommand("cost", "parameter and FLOP report");
    cost->add_option("--model", cost_model, "model file, or srnetc64[:seed]")->required();
    cost->add_option("--baseline", cost_base, "model to compare against");
    cost->add_option("--out", cost_out, "report CSV")->required();
    cost->add_option("--table", cost_table, "aligned text table");

    std::string ver_model, ver_batch = "synthetic:2x256x256";
    std::uint64_t ver_seed = 0;
    auto* verify = app.add_subcommand("verify", "run the model invariant checks");
    verify->add_option("--model", ver_model, "model file, or srnetc64[:seed]")->required();
    verify->add_option("--batch", ver_batch, "STDT file or synthetic:BxHxW[:seed]");
    verify->add_option("--seed", ver_seed, "seed for synthetic batches that do not name one");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, std::cout, std::cerr);
            return kExitOk;
        }
        note(std::string("usage error: ") + e.what());
        note("run with --help for usage");
        return kExitUsage;
    }

    try {
        if (*build) return run_build(build_seed, build_out, build_dtype);
        if (*traverse) return run_traverse(trav_flags, trav_out);
        if (*select) return run_select(sel_curves, sel_policy, sel_manual, sel_out);
        if (*search) return run_search(search_flags, search_out);
        if (*decompose) return run_decompose(dec_model, dec_layer, dec_in, dec_outr, dec_iters, dec_out);
        if (*cost) return run_cost(cost_model, cost_base, cost_out, cost_table);
        if (*verify) return run_verify(ver_model, ver_batch, ver_seed);
    } catch (const Error& e) {
        note(fmt::format("error ({}): {}", to_string(e.code()), e.what()));
        return exit_code_for(e.code());
    } catch (const std::bad_alloc&) {
        note("error: out of memory");
        return kExitNumerical;
    } catch (const std::exception& e) {
        note(std::string("error: ") + e.what());
        return kExitNumerical;
    }
    return kExitUsage;
}

int cli_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args);
}

}  // namespace tkc
