#include <cmath>

#include "tkc/convnet.hpp"

namespace tkc {

namespace {

class Builder {
public:
    explicit Builder(std::uint64_t seed) : rng_(seed) {}

    // conv + batch-norm; the conv reads `input` (empty = previous node).
    void conv_bn(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                 std::size_t spatial, bool decomposable, LayerRole role = LayerRole::Main,
                 const std::string& input = {}) {
        Node conv;
        conv.kind = NodeKind::Conv;
        conv.name = name;
        conv.input = input;
        conv.conv = ConvLayerSpec{in, out, kernel, stride, kernel / 2, spatial, spatial, decomposable, role};
        conv.kernel = he_normal_kernel(rng_, in, out, kernel);
        nodes_.push_back(std::move(conv));

        Node bn;
        bn.kind = NodeKind::BatchNorm;
        bn.name = name + "/bn";
        bn.scale.assign(out, 1.0);
        bn.shift.assign(out, 0.0);
        nodes_.push_back(std::move(bn));
    }

    void simple(NodeKind kind, const std::string& name) {
        Node n;
        n.kind = kind;
        n.name = name;
        nodes_.push_back(std::move(n));
    }

    void avg_pool(const std::string& name) {
        Node n;
        n.kind = NodeKind::AvgPool;
        n.name = name;
        n.pool_kernel = 3;
        n.pool_stride = 2;
        n.pool_padding = 1;
        nodes_.push_back(std::move(n));
    }

    void shortcut_add(const std::string& name, const std::string& input, const std::string& source) {
        Node n;
        n.kind = NodeKind::ShortcutAdd;
        n.name = name;
        n.input = input;
        n.source = source;
        nodes_.push_back(std::move(n));
    }

    void fully_connected(const std::string& name, std::size_t in, std::size_t out) {
        Node n;
        n.kind = NodeKind::FullyConnected;
        n.name = name;
        n.fc_weight = rng_.normal_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in)));
        n.fc_bias.assign(out, 0.0);
        nodes_.push_back(std::move(n));
    }

    [[nodiscard]] const std::string& last() const { return nodes_.back().name; }

    std::vector<Node> take() { return std::move(nodes_); }

private:
    Rng rng_;
    std::vector<Node> nodes_;
};

}  // namespace

ModelSpec build_srnetc64(std::uint64_t seed) {
    Builder b(seed);

    // Type-1 layers.
    b.conv_bn("L1", 1, 64, 3, 1, 256, /*decomposable=*/false);
    b.simple(NodeKind::Relu, "L1/relu");
    b.conv_bn("L2", 64, 16, 3, 1, 256, true);
    b.simple(NodeKind::Relu, "L2/relu");

    // L3-L7: unpooled residual blocks with direct shortcuts.
    for (int block = 3; block <= 7; ++block) {
        const std::string id = "L" + std::to_string(block);
        const std::string block_in = b.last();
        b.conv_bn(id + "-1", 16, 16, 3, 1, 256, true);
        b.simple(NodeKind::Relu, id + "-1/relu");
        b.conv_bn(id + "-2", 16, 16, 3, 1, 256, true);
        b.shortcut_add(id + "/add", id + "-2/bn", block_in);
    }

    // L8-L11: pooled blocks with 1x1 stride-2 transformed shortcuts.
    struct Pooled {
        int block;
        std::size_t in, out, spatial;
    };
    for (const Pooled p : {Pooled{8, 16, 16, 256}, Pooled{9, 16, 64, 128}, Pooled{10, 64, 64, 64},
                           Pooled{11, 64, 64, 32}}) {
        const std::string id = "L" + std::to_string(p.block);
        const std::string block_in = b.last();
        b.conv_bn(id + "-1", p.in, p.out, 3, 1, p.spatial, true);
        b.simple(NodeKind::Relu, id + "-1/relu");
        b.conv_bn(id + "-2", p.out, p.out, 3, 1, p.spatial, true);
        b.avg_pool(id + "/pool");
        b.conv_bn(id + "-s", p.in, p.out, 1, 2, p.spatial / 2, false, LayerRole::Shortcut, block_in);
        b.shortcut_add(id + "/add", id + "/pool", id + "-s/bn");
    }

    // L12 with global average pooling, then the classifier head.
    b.conv_bn("L12-1", 64, 64, 3, 1, 16, true);
    b.simple(NodeKind::Relu, "L12-1/relu");
    b.conv_bn("L12-2", 64, 64, 3, 1, 16, true);
    b.simple(NodeKind::GlobalAvgPool, "L12/gap");
    b.fully_connected("fc", 64, 2);

    ModelMetadata meta;
    meta.name = "srnetc64";
    meta.seed = seed;
    meta.input = InputSpec{1, 256, 256};
    meta.groups["bottom"] = {"L2",   "L3-1", "L3-2", "L4-1", "L4-2", "L5-1", "L5-2",
                             "L6-1", "L6-2", "L7-1", "L7-2"};
    meta.groups["middle"] = {"L8-1",  "L8-2",  "L9-1",  "L9-2",  "L10-1", "L10-2",
                             "L11-1", "L11-2", "L12-1", "L12-2"};
    return ModelSpec(b.take(), std::move(meta));
}

}  // namespace tkc
