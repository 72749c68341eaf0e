#include <gtest/gtest.h>

#include "support.hpp"
#include "tkc/convnet.hpp"

using namespace tkc;
using namespace tkc::testing;

TEST(Conv, MatchesLoopOracle) {
    Rng rng(1);
    struct Case {
        std::size_t c, o, d, stride, pad, h, w;
    };
    for (const Case& t : {Case{3, 4, 3, 1, 1, 7, 6}, Case{2, 5, 3, 2, 1, 8, 9}, Case{4, 2, 1, 1, 0, 5, 5},
                          Case{4, 3, 1, 2, 0, 6, 7}, Case{1, 2, 3, 1, 0, 6, 6}, Case{2, 2, 5, 1, 2, 5, 4}}) {
        const DenseTensor in = rng.normal_tensor({2, t.c, t.h, t.w});
        const DenseTensor k = rng.normal_tensor({t.c, t.o, t.d, t.d});
        const FeatureBatch got = conv2d_forward(FeatureBatch(in), k, t.stride, t.pad);
        const DenseTensor want = naive_conv(in, k, t.stride, t.pad);
        ASSERT_EQ(got.tensor().shape(), want.shape());
        EXPECT_LT(max_abs_diff(got.tensor(), want), 1e-12);
    }
}

TEST(Conv, OutputSize) {
    EXPECT_EQ(conv_output_size(256, 3, 1, 1), 256u);
    EXPECT_EQ(conv_output_size(256, 1, 2, 0), 128u);
    EXPECT_EQ(conv_output_size(256, 3, 2, 1), 128u);
    EXPECT_EQ(conv_output_size(5, 3, 2, 1), 3u);
}

TEST(Conv, DecomposedForwardMatchesReconstructedKernel) {
    Rng rng(2);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t jin = 2 + rng.index(10), jout = 2 + rng.index(10);
        const std::size_t stride = 1 + rng.index(2);
        const DenseTensor k = rng.normal_tensor({jin, jout, 3, 3});
        const auto f = tucker_decompose(k, 1 + rng.index(jin), 1 + rng.index(jout));
        const FeatureBatch in(rng.normal_tensor({2, jin, 9, 8}));
        const FeatureBatch a = decomposed_forward(in, f, stride, 1);
        const FeatureBatch b = conv2d_forward(in, reconstruct(f), stride, 1);
        EXPECT_LT(relative_error(b.tensor(), a.tensor()), 1e-12);
    }
}

TEST(BatchNorm, MatchesOracle) {
    Rng rng(3);
    const DenseTensor in = rng.normal_tensor({3, 4, 5, 5}, 2.0);
    const std::vector<double> scale{1.0, 0.5, 2.0, -1.0}, shift{0.0, 1.0, -2.0, 0.25};
    const FeatureBatch got = batch_norm(FeatureBatch(in), scale, shift, 1e-5);
    EXPECT_LT(max_abs_diff(got.tensor(), naive_batch_norm(in, scale, shift, 1e-5)), 1e-12);
}

TEST(BatchNorm, RequiresTwoImages) {
    Rng rng(4);
    EXPECT_THROW(batch_norm(FeatureBatch(rng.normal_tensor({1, 2, 3, 3})), std::vector<double>(2, 1.0),
                            std::vector<double>(2, 0.0)),
                 Error);
}

TEST(Pooling, AveragePoolCountsPadding) {
    // 1 x 1 x 2 x 2 of ones, 3x3 window, stride 2, pad 1: the single output sees 4 of 9 cells.
    const FeatureBatch in(DenseTensor::filled({1, 1, 2, 2}, 1.0));
    const FeatureBatch out = avg_pool(in, 3, 2, 1);
    ASSERT_EQ(out.tensor().shape(), (Shape{1, 1, 1, 1}));
    EXPECT_NEAR(out.tensor()[0], 4.0 / 9.0, 1e-15);
}

TEST(Pooling, GlobalAverageAndFullyConnected) {
    const FeatureBatch in(DenseTensor({1, 2, 1, 2}, {1, 3, 10, 20}));
    const FeatureBatch g = global_avg_pool(in);
    EXPECT_EQ(g.tensor(), DenseTensor({1, 2, 1, 1}, {2, 15}));
    const Matrix w(2, 3, {1, 0, 1, 0, 1, 1});
    const FeatureBatch fc = fully_connected(g, w, std::vector<double>{0.5, 0, 0});
    EXPECT_EQ(fc.tensor(), DenseTensor({1, 3, 1, 1}, {2.5, 15, 17}));
}

TEST(Elementwise, ReluAndAdd) {
    const FeatureBatch a(DenseTensor({1, 1, 1, 3}, {-1, 0, 2}));
    EXPECT_EQ(relu(a).tensor(), DenseTensor({1, 1, 1, 3}, {0, 0, 2}));
    EXPECT_EQ(add(a, a).tensor(), DenseTensor({1, 1, 1, 3}, {-2, 0, 4}));
    EXPECT_THROW(add(a, FeatureBatch(DenseTensor({1, 1, 1, 2}))), Error);
}

// ---------------------------------------------------------------------------

TEST(SRNetC64, Structure) {
    const ModelSpec m = build_srnetc64(7);
    EXPECT_EQ(m.conv_layers().size(), 26u);
    EXPECT_EQ(m.main_layers().size(), 22u);
    const auto dec = m.decomposable_layers();
    ASSERT_EQ(dec.size(), 21u);
    EXPECT_EQ(dec.front(), "L2");
    EXPECT_EQ(dec.back(), "L12-2");
    EXPECT_FALSE(m.node("L1").conv.decomposable);
    EXPECT_FALSE(m.node("L9-s").conv.decomposable);

    struct Expect {
        const char* layer;
        std::size_t in, out, spatial;
    };
    for (const Expect& e : {Expect{"L1", 1, 64, 256}, Expect{"L2", 64, 16, 256}, Expect{"L7-2", 16, 16, 256},
                            Expect{"L8-2", 16, 16, 256}, Expect{"L9-1", 16, 64, 128}, Expect{"L10-1", 64, 64, 64},
                            Expect{"L11-2", 64, 64, 32}, Expect{"L12-2", 64, 64, 16}, Expect{"L8-s", 16, 16, 128},
                            Expect{"L11-s", 64, 64, 16}}) {
        const auto& c = m.node(e.layer).conv;
        EXPECT_EQ(c.in_channels, e.in) << e.layer;
        EXPECT_EQ(c.out_channels, e.out) << e.layer;
        EXPECT_EQ(c.out_h, e.spatial) << e.layer;
    }
    EXPECT_EQ(m.group_of("L8-1"), std::optional<std::string>("middle"));
    EXPECT_EQ(m.group_of("L2"), std::optional<std::string>("bottom"));
    EXPECT_EQ(m.group_of("L1"), std::nullopt);
}

TEST(SRNetC64, ForwardShapeAndDeterminism) {
    Rng rng(1);
    const FeatureBatch batch(rng.normal_tensor({2, 1, 32, 32}));
    const ModelSpec a = build_srnetc64(3), b = build_srnetc64(3), c = build_srnetc64(4);
    const FeatureBatch out = forward(a, batch);
    EXPECT_EQ(out.tensor().shape(), (Shape{2, 2, 1, 1}));
    EXPECT_EQ(out, forward(b, batch));
    EXPECT_EQ(a, b);
    EXPECT_FALSE(a == c);
}

TEST(SRNetC64, KernelInitIsHeNormal) {
    const ModelSpec m = build_srnetc64(5);
    const DenseTensor& k = m.node("L10-1").kernel;
    double ss = 0.0;
    for (double v : k.data()) ss += v * v;
    const double var = ss / static_cast<double>(k.size());
    EXPECT_NEAR(var, 2.0 / (64 * 9), 0.1 * 2.0 / (64 * 9));
}

TEST(Model, ForwardToLayerIsBatchNormOfConv) {
    const ModelSpec m = toy_model(1, {});
    Rng rng(2);
    const FeatureBatch batch(rng.normal_tensor({2, 1, 12, 12}));
    const FeatureBatch in = layer_input(m, batch, "T3");
    const Node& conv = m.node("T3");
    const Node& bn = m.node("T3/bn");
    const DenseTensor want = naive_batch_norm(naive_conv(in.tensor(), conv.kernel, 1, 1), bn.scale, bn.shift, bn.eps);
    EXPECT_LT(max_abs_diff(forward_to_layer(m, batch, "T3").tensor(), want), 1e-10);
}

TEST(Model, ReplaceLayerPolicy) {
    const ModelSpec m = build_srnetc64(1);
    const auto& g = m.node("L3-1").conv;
    const auto f = shape_only_factors(g.in_channels, g.out_channels, 3, 4, 4);
    EXPECT_THROW(
        {
            try {
                replace_layer(m, "L1", shape_only_factors(1, 64, 3, 1, 8));
            } catch (const Error& e) {
                EXPECT_EQ(e.code(), ErrorCode::Policy);
                throw;
            }
        },
        Error);
    const ModelSpec r = replace_layer(m, "L3-1", f);
    EXPECT_EQ(r.node("L3-1").kind, NodeKind::DecomposedGroup);
    EXPECT_THROW(replace_layer(r, "L3-1", f), Error);
    EXPECT_THROW(replace_layer(m, "L8-s", shape_only_factors(16, 16, 1, 4, 4)), Error);
    EXPECT_THROW(replace_layer(m, "L3-1", shape_only_factors(16, 8, 3, 4, 4)), Error);
    EXPECT_THROW(replace_layer(m, "nope", f), Error);
    // untouched nodes carried over verbatim
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m.node(i).name != "L3-1") EXPECT_EQ(m.node(i), r.node(i));
    }
}

TEST(Model, FullRankReplacementPreservesOutput) {
    const ModelSpec m = toy_model(3, {});
    Rng rng(4);
    const FeatureBatch batch(rng.normal_tensor({2, 1, 10, 10}));
    const ModelSpec r = replace_layer(m, "T2", tucker_decompose(m.node("T2").kernel, 32, 32));
    EXPECT_LT(relative_error(forward(m, batch).tensor(), forward(r, batch).tensor()), 1e-10);
}

TEST(Model, ValidateRejectsBrokenGraphs) {
    auto conv_node = [](const std::string& name, std::size_t in, std::size_t out) {
        Node n;
        n.kind = NodeKind::Conv;
        n.name = name;
        n.conv = ConvLayerSpec{in, out, 3, 1, 1, 8, 8, true, LayerRole::Main};
        n.kernel = DenseTensor({in, out, 3, 3});
        return n;
    };
    auto bn_node = [](const std::string& name, std::size_t c) {
        Node n;
        n.kind = NodeKind::BatchNorm;
        n.name = name;
        n.scale.assign(c, 1.0);
        n.shift.assign(c, 0.0);
        return n;
    };
    ModelMetadata meta;
    meta.input = InputSpec{1, 8, 8};
    EXPECT_NO_THROW(ModelSpec({conv_node("a", 1, 4), bn_node("a/bn", 4)}, meta));
    // channel mismatch
    EXPECT_THROW(ModelSpec({conv_node("a", 1, 4), bn_node("a/bn", 4), conv_node("b", 3, 4), bn_node("b/bn", 4)}, meta),
                 Error);
    // duplicate names
    EXPECT_THROW(ModelSpec({conv_node("a", 1, 4), bn_node("a", 4)}, meta), Error);
    // conv without its batch norm
    EXPECT_THROW(ModelSpec({conv_node("a", 1, 4)}, meta), Error);
    // BN size mismatch
    EXPECT_THROW(ModelSpec({conv_node("a", 1, 4), bn_node("a/bn", 3)}, meta), Error);
    // wrong declared output size
    Node bad = conv_node("a", 1, 4);
    bad.conv.out_h = 4;
    EXPECT_THROW(ModelSpec({bad, bn_node("a/bn", 4)}, meta), Error);
    // forward reference
    Node fwd = conv_node("a", 1, 4);
    fwd.input = "b";
    EXPECT_THROW(ModelSpec({fwd, bn_node("a/bn", 4)}, meta), Error);
    // group naming an unknown layer
    ModelMetadata g = meta;
    g.groups["bottom"] = {"zz"};
    EXPECT_THROW(ModelSpec({conv_node("a", 1, 4), bn_node("a/bn", 4)}, g), Error);
}

TEST(Model, ForwardVisitSeesEveryNode) {
    const ModelSpec m = toy_model(5, {});
    Rng rng(6);
    const FeatureBatch batch(rng.normal_tensor({2, 1, 8, 8}));
    std::size_t seen = 0;
    FeatureBatch last;
    forward_visit(m, batch, [&](std::size_t i, const FeatureBatch&, const FeatureBatch& out) {
        EXPECT_EQ(i, seen++);
        last = out;
    });
    EXPECT_EQ(seen, m.size());
    EXPECT_EQ(last, forward(m, batch));
}
