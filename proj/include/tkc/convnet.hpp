#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tkc/tensor.hpp"
#include "tkc/tucker.hpp"

namespace tkc {

/// A B x C x H x W activation batch.
class FeatureBatch {
public:
    FeatureBatch() = default;
    explicit FeatureBatch(DenseTensor data);

    [[nodiscard]] std::size_t batch() const { return data_.dim(0); }
    [[nodiscard]] std::size_t channels() const { return data_.dim(1); }
    [[nodiscard]] std::size_t height() const { return data_.dim(2); }
    [[nodiscard]] std::size_t width() const { return data_.dim(3); }

    [[nodiscard]] const DenseTensor& tensor() const noexcept { return data_; }
    [[nodiscard]] DenseTensor& tensor() noexcept { return data_; }

    /// Contiguous images [first, first + count).
    [[nodiscard]] FeatureBatch slice(std::size_t first, std::size_t count) const;

    bool operator==(const FeatureBatch&) const = default;

private:
    DenseTensor data_;
};

// Layer primitives. Kernels use the J_in x J_out x D x D layout.

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

FeatureBatch conv2d_forward(const FeatureBatch& input, const DenseTensor& kernel, std::size_t stride,
                            std::size_t padding);

/// Training-mode batch normalization: statistics over batch and spatial dims.
FeatureBatch batch_norm(const FeatureBatch& input, std::span<const double> scale, std::span<const double> shift,
                        double eps = 1e-5);

/// 1x1 conv by factor_in, D x D conv by the core (stride/padding applied here), 1x1 conv by factor_out.
FeatureBatch decomposed_forward(const FeatureBatch& input, const TuckerFactors& f, std::size_t stride,
                                std::size_t padding);

FeatureBatch relu(const FeatureBatch& input);
/// Average pooling; padded positions count towards the divisor.
FeatureBatch avg_pool(const FeatureBatch& input, std::size_t kernel, std::size_t stride, std::size_t padding);
FeatureBatch global_avg_pool(const FeatureBatch& input);
/// weight is in_features x out_features; input must be B x C x 1 x 1. Output is B x out x 1 x 1.
FeatureBatch fully_connected(const FeatureBatch& input, const Matrix& weight, std::span<const double> bias);
FeatureBatch add(const FeatureBatch& a, const FeatureBatch& b);

// ---------------------------------------------------------------------------
// Model graph

enum class NodeKind { Conv, DecomposedGroup, BatchNorm, Relu, AvgPool, GlobalAvgPool, ShortcutAdd, FullyConnected };

std::string_view to_string(NodeKind kind);
std::optional<NodeKind> node_kind_from_string(std::string_view s);

enum class LayerRole { Main, Shortcut };

struct ConvLayerSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_size = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t out_h = 1;  // nominal output spatial size, used by the cost model
    std::size_t out_w = 1;
    bool decomposable = true;
    LayerRole role = LayerRole::Main;

    bool operator==(const ConvLayerSpec&) const = default;
};

struct Node {
    NodeKind kind = NodeKind::Conv;
    std::string name;
    std::string input;   // producer of this node's operand; empty means the previous node
    std::string source;  // second operand of ShortcutAdd

    ConvLayerSpec conv;                    // Conv, DecomposedGroup
    DenseTensor kernel;                    // Conv
    std::optional<TuckerFactors> factors;  // DecomposedGroup

    std::vector<double> scale;  // BatchNorm
    std::vector<double> shift;
    double eps = 1e-5;

    std::size_t pool_kernel = 3;  // AvgPool
    std::size_t pool_stride = 2;
    std::size_t pool_padding = 1;

    Matrix fc_weight;  // FullyConnected
    std::vector<double> fc_bias;

    [[nodiscard]] bool is_conv_like() const {
        return kind == NodeKind::Conv || kind == NodeKind::DecomposedGroup;
    }

    bool operator==(const Node&) const = default;
};

struct InputSpec {
    std::size_t channels = 1;
    std::size_t height = 256;
    std::size_t width = 256;
    bool operator==(const InputSpec&) const = default;
};

struct ModelMetadata {
    std::string name;
    std::uint64_t seed = 0;
    InputSpec input;
    /// Layer groups, e.g. "bottom" -> {L2, ...}; used to pick per-group search start rates.
    std::map<std::string, std::vector<std::string>> groups;

    bool operator==(const ModelMetadata&) const = default;
};

/// Immutable, validated layer graph evaluated in declaration order. Copies share
/// node storage; with_node() swaps one node without touching the others.
class ModelSpec {
public:
    ModelSpec() = default;
    ModelSpec(std::vector<Node> nodes, ModelMetadata metadata);

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] const Node& node(std::size_t index) const { return *nodes_.at(index); }
    [[nodiscard]] const Node& node(std::string_view name) const;
    [[nodiscard]] std::optional<std::size_t> find(std::string_view name) const;
    [[nodiscard]] const ModelMetadata& metadata() const { return metadata_; }

    /// Names of all conv-like nodes in declaration order.
    [[nodiscard]] std::vector<std::string> conv_layers() const;
    [[nodiscard]] std::vector<std::string> main_layers() const;
    [[nodiscard]] std::vector<std::string> decomposable_layers() const;
    [[nodiscard]] std::optional<std::string> group_of(std::string_view layer) const;

    /// Index of the producer of node `index`'s primary operand, or nullopt for the model input.
    [[nodiscard]] std::optional<std::size_t> input_index(std::size_t index) const;

    [[nodiscard]] ModelSpec with_node(std::size_t index, Node replacement) const;

    /// Static shape inference over the nominal input; throws on any violated invariant.
    void validate() const;

    bool operator==(const ModelSpec& other) const;

private:
    std::vector<std::shared_ptr<const Node>> nodes_;
    ModelMetadata metadata_;
};

/// Output of an arbitrary node.
FeatureBatch forward_to_node(const ModelSpec& model, const FeatureBatch& batch, std::string_view node);

/// Batch-normalized output of a conv-like layer (the output of the BN node that follows it).
FeatureBatch forward_to_layer(const ModelSpec& model, const FeatureBatch& batch, std::string_view layer);

/// Activation consumed by a conv-like layer.
FeatureBatch layer_input(const ModelSpec& model, const FeatureBatch& batch, std::string_view layer);

/// Output of the last node.
FeatureBatch forward(const ModelSpec& model, const FeatureBatch& batch);

/// Called once per node with its primary operand and its output.
using NodeVisitor = std::function<void(std::size_t index, const FeatureBatch& input, const FeatureBatch& output)>;

/// Full forward pass that reports every node's operand and output.
void forward_visit(const ModelSpec& model, const FeatureBatch& batch, const NodeVisitor& visit);

/// Conv layer evaluated on a given operand (conv or decomposed group, whichever the node holds).
FeatureBatch apply_conv_like(const Node& node, const FeatureBatch& input);

/// Swap a decomposable conv layer for a three-stage decomposed group.
ModelSpec replace_layer(const ModelSpec& model, std::string_view layer, TuckerFactors factors);

/// Kernel of a conv-like node (the reconstructed kernel for a decomposed group).
DenseTensor layer_kernel(const Node& node);

/// He-normal kernel, J_in x J_out x D x D.
DenseTensor he_normal_kernel(Rng& rng, std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size);

/// SRNetC64: SRNet with layers L9-L12 capped at 64 channels, random He-normal weights,
/// BN scale 1 and shift 0. Nominal input 1 x 256 x 256.
ModelSpec build_srnetc64(std::uint64_t seed);

}  // namespace tkc
