#pragma once

// Test-only oracles and fixtures. Everything here is written independently of the
// library's fast paths: plain loops, no Eigen.

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tkc/convnet.hpp"
#include "tkc/cost_model.hpp"
#include "tkc/tensor.hpp"
#include "tkc/tucker.hpp"

namespace tkc::testing {

/// Kernel with exact Tucker ranks (rank_in, rank_out): core x1 A x2 B with orthonormal A, B.
inline DenseTensor planted_kernel(Rng& rng, std::size_t jin, std::size_t jout, std::size_t d, std::size_t rank_in,
                                  std::size_t rank_out) {
    const DenseTensor core = rng.normal_tensor({rank_in, rank_out, d, d});
    const Matrix a = rng.orthonormal_columns(jin, rank_in);
    const Matrix b = rng.orthonormal_columns(jout, rank_out);
    DenseTensor k({jin, jout, d, d});
    for (std::size_t i = 0; i < jin; ++i)
        for (std::size_t o = 0; o < jout; ++o)
            for (std::size_t y = 0; y < d; ++y)
                for (std::size_t x = 0; x < d; ++x) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < rank_in; ++p)
                        for (std::size_t q = 0; q < rank_out; ++q)
                            s += core.at({p, q, y, x}) * a(i, p) * b(o, q);
                    k.at({i, o, y, x}) = s;
                }
    return k;
}

/// Direct cross-correlation with zero padding; kernel is J_in x J_out x D x D.
inline DenseTensor naive_conv(const DenseTensor& in, const DenseTensor& k, std::size_t stride, std::size_t pad) {
    const std::size_t b = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t oc = k.dim(1), d = k.dim(2);
    const std::size_t ho = (h + 2 * pad - d) / stride + 1, wo = (w + 2 * pad - d) / stride + 1;
    DenseTensor out({b, oc, ho, wo});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < c; ++i)
                        for (std::size_t ky = 0; ky < d; ++ky)
                            for (std::size_t kx = 0; kx < d; ++kx) {
                                const long yy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                                const long xx = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
                                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                                    continue;
                                s += in.at({n, i, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)}) *
                                     k.at({i, o, ky, kx});
                            }
                    out.at({n, o, y, x}) = s;
                }
    return out;
}

/// Training-mode batch norm with biased variance.
inline DenseTensor naive_batch_norm(const DenseTensor& in, const std::vector<double>& scale,
                                    const std::vector<double>& shift, double eps) {
    const std::size_t b = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
    DenseTensor out(in.shape());
    for (std::size_t k = 0; k < c; ++k) {
        double mean = 0.0, var = 0.0;
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) mean += in.at({n, k, y, x});
        mean /= static_cast<double>(b * h * w);
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) var += std::pow(in.at({n, k, y, x}) - mean, 2);
        var /= static_cast<double>(b * h * w);
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    out.at({n, k, y, x}) = scale[k] * (in.at({n, k, y, x}) - mean) / std::sqrt(var + eps) + shift[k];
    }
    return out;
}

inline double naive_norm(const DenseTensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

/// ||O - O_T|| / ||O||, with O_T from a plain convolution by the reconstructed kernel.
inline double distortion_oracle(const ModelSpec& model, const std::string& layer, const FeatureBatch& batch,
                                std::size_t rank_in, std::size_t rank_out) {
    const Node& conv = model.node(layer);
    const Node& bn = model.node(*model.find(layer) + 1);
    const DenseTensor input = layer_input(model, batch, layer).tensor();
    const DenseTensor approx_kernel = reconstruct(tucker_decompose(conv.kernel, rank_in, rank_out));
    const DenseTensor ref =
        naive_batch_norm(naive_conv(input, conv.kernel, conv.conv.stride, conv.conv.padding), bn.scale, bn.shift, bn.eps);
    const DenseTensor got = naive_batch_norm(naive_conv(input, approx_kernel, conv.conv.stride, conv.conv.padding),
                                             bn.scale, bn.shift, bn.eps);
    double diff = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) diff += std::pow(ref[i] - got[i], 2);
    return std::sqrt(diff) / naive_norm(ref);
}

// ---------------------------------------------------------------------------
// Toy model: stem 1 -> 16 (not decomposable), T1 16 -> 32, then residual T2..T6 at 32 channels.

struct ToyPlant {
    std::size_t rank_in;
    std::size_t rank_out;
};

inline const std::vector<std::string>& toy_layers() {
    static const std::vector<std::string> names{"T1", "T2", "T3", "T4", "T5", "T6"};
    return names;
}

/// plants: per-layer planted ranks; layers without a plant get a dense random kernel.
inline ModelSpec toy_model(std::uint64_t seed, const std::map<std::string, ToyPlant>& plants,
                           std::size_t spatial = 32) {
    Rng rng(seed);
    std::vector<Node> nodes;
    auto conv = [&](const std::string& name, std::size_t in, std::size_t out, bool decomposable) {
        Node n;
        n.kind = NodeKind::Conv;
        n.name = name;
        n.conv = ConvLayerSpec{in, out, 3, 1, 1, spatial, spatial, decomposable, LayerRole::Main};
        auto it = plants.find(name);
        n.kernel = it == plants.end() ? he_normal_kernel(rng, in, out, 3)
                                      : planted_kernel(rng, in, out, 3, it->second.rank_in, it->second.rank_out);
        nodes.push_back(std::move(n));
        Node bn;
        bn.kind = NodeKind::BatchNorm;
        bn.name = name + "/bn";
        bn.scale.assign(out, 1.0);
        bn.shift.assign(out, 0.0);
        nodes.push_back(std::move(bn));
    };
    auto simple = [&](NodeKind kind, const std::string& name, const std::string& input = {},
                      const std::string& source = {}) {
        Node n;
        n.kind = kind;
        n.name = name;
        n.input = input;
        n.source = source;
        nodes.push_back(std::move(n));
    };

    conv("stem", 1, 16, false);
    simple(NodeKind::Relu, "stem/relu");
    conv("T1", 16, 32, true);
    simple(NodeKind::Relu, "T1/relu");
    std::string block_in = "T1/relu";
    for (const char* name : {"T2", "T3", "T4", "T5", "T6"}) {
        const std::string id = name;
        conv(id, 32, 32, true);
        simple(NodeKind::ShortcutAdd, id + "/add", id + "/bn", block_in);
        simple(NodeKind::Relu, id + "/relu");
        block_in = id + "/relu";
    }
    ModelMetadata meta;
    meta.name = "toy";
    meta.seed = seed;
    meta.input = InputSpec{1, spatial, spatial};
    return ModelSpec(std::move(nodes), std::move(meta));
}

// ---------------------------------------------------------------------------
// Published SRNetC64 channel structures.

using RankTable = std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>;

inline const RankTable& cylinder_ranks() {
    static const RankTable t{{"L2", {32, 8}},     {"L3-1", {7, 7}},    {"L3-2", {11, 11}},  {"L4-1", {7, 7}},
                             {"L4-2", {8, 8}},    {"L5-1", {8, 8}},    {"L5-2", {9, 9}},    {"L6-1", {8, 8}},
                             {"L6-2", {11, 11}},  {"L7-1", {9, 9}},    {"L7-2", {10, 10}},  {"L8-1", {9, 9}},
                             {"L8-2", {6, 6}},    {"L9-1", {3, 12}},   {"L9-2", {13, 13}},  {"L10-1", {13, 13}},
                             {"L10-2", {11, 11}}, {"L11-1", {10, 10}}, {"L11-2", {13, 13}}, {"L12-1", {15, 15}},
                             {"L12-2", {16, 16}}};
    return t;
}

inline const RankTable& ladder_ranks() {
    static const RankTable t{{"L2", {32, 8}},     {"L3-1", {7, 7}},   {"L3-2", {7, 15}},   {"L4-1", {6, 8}},
                             {"L4-2", {8, 8}},    {"L5-1", {11, 5}},  {"L5-2", {11, 7}},   {"L6-1", {4, 12}},
                             {"L6-2", {14, 8}},   {"L7-1", {5, 13}},  {"L7-2", {14, 6}},   {"L8-1", {7, 11}},
                             {"L8-2", {5, 7}},    {"L9-1", {3, 12}},  {"L9-2", {11, 15}},  {"L10-1", {9, 17}},
                             {"L10-2", {12, 10}}, {"L11-1", {7, 13}}, {"L11-2", {11, 15}}, {"L12-1", {10, 20}},
                             {"L12-2", {23, 9}}};
    return t;
}

/// Zero-valued factors of the right shapes; enough for cost accounting.
inline TuckerFactors shape_only_factors(std::size_t jin, std::size_t jout, std::size_t d, std::size_t i,
                                        std::size_t o) {
    return TuckerFactors{DenseTensor({i, o, d, d}), Matrix(jin, i), Matrix(o, jout)};
}

inline ModelSpec with_ranks(const ModelSpec& model, const RankTable& ranks) {
    ModelSpec out = model;
    for (const auto& [layer, r] : ranks) {
        const auto& g = model.node(layer).conv;
        out = replace_layer(out, layer, shape_only_factors(g.in_channels, g.out_channels, g.kernel_size, r.first,
                                                           r.second));
    }
    return out;
}

}  // namespace tkc::testing

// ---------------------------------------------------------------------------
// Source scan for label-bearing identifiers.

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

namespace tkc::testing {

/// Files making up the search and I/O/CLI surface.
inline std::vector<std::string> unsupervised_sources(const std::string& root) {
    return {root + "/include/tkc/search.hpp", root + "/src/search.cpp",       root + "/include/tkc/io.hpp",
            root + "/src/weights_io.cpp",     root + "/src/model_io.cpp",     root + "/src/report_io.cpp",
            root + "/include/tkc/cli.hpp",    root + "/src/cli.cpp",          root + "/tools/main.cpp"};
}

/// "file:line: token" for every identifier (or snake/camel part of one) naming labels or image classes.
inline std::vector<std::string> label_hits(const std::vector<std::string>& files) {
    static const std::regex word(R"([A-Za-z_][A-Za-z0-9_]*)");
    static const std::regex part(R"([A-Z]?[a-z0-9]+|[A-Z]+(?![a-z]))");
    static const std::vector<std::string> banned{"label", "labels", "labeled", "labelled", "stego",
                                                 "stegos", "cover", "covers", "truth"};
    std::vector<std::string> hits;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) {
            hits.push_back(f + ": unreadable");
            continue;
        }
        std::string line;
        for (std::size_t n = 1; std::getline(in, line); ++n) {
            for (auto it = std::sregex_iterator(line.begin(), line.end(), word); it != std::sregex_iterator(); ++it) {
                const std::string id = it->str();
                std::string pieces;
                for (auto p = std::sregex_iterator(id.begin(), id.end(), part); p != std::sregex_iterator(); ++p) {
                    std::string lower = p->str();
                    for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
                    for (const auto& b : banned)
                        if (lower == b) hits.push_back(f + ":" + std::to_string(n) + ": " + id);
                }
            }
        }
    }
    return hits;
}

}  // namespace tkc::testing
