#include "tkc/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace tkc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

// J_in x J_out x D x D kernel -> J_out x (J_in * D * D) weight matrix.
RowMat weight_matrix(const DenseTensor& kernel) {
    const std::size_t jin = kernel.dim(0), jout = kernel.dim(1), d = kernel.dim(2);
    const std::size_t area = d * d;
    RowMat w(idx(jout), idx(jin * area));
    const auto k = kernel.data();
    for (std::size_t j = 0; j < jin; ++j)
        for (std::size_t i = 0; i < jout; ++i)
            for (std::size_t a = 0; a < area; ++a) w(idx(i), idx(j * area + a)) = k[(j * jout + i) * area + a];
    return w;
}

FeatureBatch pointwise(const FeatureBatch& input, const Eigen::Ref<const RowMat>& w) {
    const std::size_t b = input.batch(), c = input.channels(), hw = input.height() * input.width();
    const std::size_t out_c = static_cast<std::size_t>(w.rows());
    DenseTensor out({b, out_c, input.height(), input.width()});
    for (std::size_t n = 0; n < b; ++n) {
        Eigen::Map<const RowMat> src(input.tensor().data().data() + n * c * hw, idx(c), idx(hw));
        Eigen::Map<RowMat> dst(out.data().data() + n * out_c * hw, idx(out_c), idx(hw));
        dst.noalias() = w * src;
    }
    return FeatureBatch(std::move(out));
}

}  // namespace

FeatureBatch::FeatureBatch(DenseTensor data) : data_(std::move(data)) {
    require(data_.rank() == 4, ErrorCode::InvalidArgument,
            "feature batch must be B x C x H x W, got " + shape_string(data_.shape()));
}

FeatureBatch FeatureBatch::slice(std::size_t first, std::size_t count) const {
    require(count >= 1 && first + count <= batch(), ErrorCode::InvalidArgument, "batch slice out of range");
    const std::size_t per = channels() * height() * width();
    std::vector<double> values(data_.values().begin() + static_cast<std::ptrdiff_t>(first * per),
                               data_.values().begin() + static_cast<std::ptrdiff_t>((first + count) * per));
    return FeatureBatch(DenseTensor({count, channels(), height(), width()}, std::move(values)));
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    require(stride >= 1, ErrorCode::InvalidArgument, "stride must be >= 1");
    require(in + 2 * padding >= kernel, ErrorCode::InvalidArgument,
            "kernel " + std::to_string(kernel) + " larger than padded input " + std::to_string(in + 2 * padding));
    return (in + 2 * padding - kernel) / stride + 1;
}

FeatureBatch conv2d_forward(const FeatureBatch& input, const DenseTensor& kernel, std::size_t stride,
                            std::size_t padding) {
    require(kernel.rank() == 4 && kernel.dim(2) == kernel.dim(3), ErrorCode::InvalidArgument,
            "conv kernel must be J_in x J_out x D x D, got " + shape_string(kernel.shape()));
    require(kernel.dim(0) == input.channels(), ErrorCode::InvalidArgument,
            "conv kernel expects " + std::to_string(kernel.dim(0)) + " input channels, batch has " +
                std::to_string(input.channels()));
    const std::size_t d = kernel.dim(2);
    const RowMat w = weight_matrix(kernel);
    if (d == 1 && stride == 1 && padding == 0) return pointwise(input, w);

    const std::size_t b = input.batch(), c = input.channels(), h = input.height(), wd = input.width();
    const std::size_t ho = conv_output_size(h, d, stride, padding);
    const std::size_t wo = conv_output_size(wd, d, stride, padding);
    const std::size_t out_c = kernel.dim(1);
    DenseTensor out({b, out_c, ho, wo});

    RowMat cols(idx(c * d * d), idx(ho * wo));
    const auto in = input.tensor().data();
    for (std::size_t n = 0; n < b; ++n) {
        const double* img = in.data() + n * c * h * wd;
        for (std::size_t j = 0; j < c; ++j) {
            for (std::size_t k = 0; k < d; ++k) {
                for (std::size_t s = 0; s < d; ++s) {
                    double* row = cols.row(idx((j * d + k) * d + s)).data();
                    for (std::size_t y = 0; y < ho; ++y) {
                        const std::ptrdiff_t hy = static_cast<std::ptrdiff_t>(y * stride + k) -
                                                  static_cast<std::ptrdiff_t>(padding);
                        for (std::size_t x = 0; x < wo; ++x) {
                            const std::ptrdiff_t wx = static_cast<std::ptrdiff_t>(x * stride + s) -
                                                      static_cast<std::ptrdiff_t>(padding);
                            const bool inside = hy >= 0 && hy < static_cast<std::ptrdiff_t>(h) && wx >= 0 &&
                                                wx < static_cast<std::ptrdiff_t>(wd);
                            row[y * wo + x] = inside ? img[(j * h + static_cast<std::size_t>(hy)) * wd +
                                                           static_cast<std::size_t>(wx)]
                                                     : 0.0;
                        }
                    }
                }
            }
        }
        Eigen::Map<RowMat> dst(out.data().data() + n * out_c * ho * wo, idx(out_c), idx(ho * wo));
        dst.noalias() = w * cols;
    }
    return FeatureBatch(std::move(out));
}

FeatureBatch batch_norm(const FeatureBatch& input, std::span<const double> scale, std::span<const double> shift,
                        double eps) {
    require(input.batch() >= 2, ErrorCode::InvalidArgument,
            "batch normalization needs a batch of at least 2, got " + std::to_string(input.batch()));
    const std::size_t b = input.batch(), c = input.channels(), hw = input.height() * input.width();
    require(scale.size() == c && shift.size() == c, ErrorCode::InvalidArgument,
            "batch-norm parameters sized for " + std::to_string(scale.size()) + " channels, batch has " +
                std::to_string(c));
    require(eps >= 0.0, ErrorCode::InvalidArgument, "batch-norm eps must be >= 0");

    FeatureBatch out = input;
    auto data = out.tensor().data();
    const double count = static_cast<double>(b * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        for (std::size_t n = 0; n < b; ++n) {
            const double* p = data.data() + (n * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) mean += p[i];
        }
        mean /= count;
        double var = 0.0;
        for (std::size_t n = 0; n < b; ++n) {
            const double* p = data.data() + (n * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) var += (p[i] - mean) * (p[i] - mean);
        }
        var /= count;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t n = 0; n < b; ++n) {
            double* p = data.data() + (n * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - mean) * inv * scale[ch] + shift[ch];
        }
    }
    return out;
}

FeatureBatch decomposed_forward(const FeatureBatch& input, const TuckerFactors& f, std::size_t stride,
                                std::size_t padding) {
    require(f.factor_in.rows() == input.channels(), ErrorCode::InvalidArgument,
            "decomposed group expects " + std::to_string(f.factor_in.rows()) + " input channels, batch has " +
                std::to_string(input.channels()));
    require(f.core.rank() == 4 && f.core.dim(0) == f.factor_in.cols() && f.core.dim(1) == f.factor_out.rows(),
            ErrorCode::InvalidArgument, "decomposed group factors are inconsistent with the core");
    const FeatureBatch reduced = pointwise(input, f.factor_in.eigen().transpose());
    const FeatureBatch core_out = conv2d_forward(reduced, f.core, stride, padding);
    return pointwise(core_out, f.factor_out.eigen().transpose());
}

FeatureBatch relu(const FeatureBatch& input) {
    FeatureBatch out = input;
    for (auto& v : out.tensor().data()) v = std::max(v, 0.0);
    return out;
}

FeatureBatch avg_pool(const FeatureBatch& input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const std::size_t b = input.batch(), c = input.channels(), h = input.height(), w = input.width();
    const std::size_t ho = conv_output_size(h, kernel, stride, padding);
    const std::size_t wo = conv_output_size(w, kernel, stride, padding);
    DenseTensor out({b, c, ho, wo});
    const auto in = input.tensor().data();
    const double area = static_cast<double>(kernel * kernel);
    for (std::size_t plane = 0; plane < b * c; ++plane) {
        const double* src = in.data() + plane * h * w;
        double* dst = out.data().data() + plane * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t x = 0; x < wo; ++x) {
                double sum = 0.0;
                for (std::size_t k = 0; k < kernel; ++k) {
                    const std::ptrdiff_t hy =
                        static_cast<std::ptrdiff_t>(y * stride + k) - static_cast<std::ptrdiff_t>(padding);
                    if (hy < 0 || hy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t s = 0; s < kernel; ++s) {
                        const std::ptrdiff_t wx =
                            static_cast<std::ptrdiff_t>(x * stride + s) - static_cast<std::ptrdiff_t>(padding);
                        if (wx < 0 || wx >= static_cast<std::ptrdiff_t>(w)) continue;
                        sum += src[static_cast<std::size_t>(hy) * w + static_cast<std::size_t>(wx)];
                    }
                }
                dst[y * wo + x] = sum / area;
            }
        }
    }
    return FeatureBatch(std::move(out));
}

FeatureBatch global_avg_pool(const FeatureBatch& input) {
    const std::size_t b = input.batch(), c = input.channels(), hw = input.height() * input.width();
    DenseTensor out({b, c, 1, 1});
    const auto in = input.tensor().data();
    for (std::size_t plane = 0; plane < b * c; ++plane) {
        double sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) sum += in[plane * hw + i];
        out[plane] = sum / static_cast<double>(hw);
    }
    return FeatureBatch(std::move(out));
}

FeatureBatch fully_connected(const FeatureBatch& input, const Matrix& weight, std::span<const double> bias) {
    require(input.height() == 1 && input.width() == 1, ErrorCode::InvalidArgument,
            "fully-connected layer expects B x C x 1 x 1 input");
    require(weight.rows() == input.channels() && bias.size() == weight.cols(), ErrorCode::InvalidArgument,
            "fully-connected weight/bias do not match input features");
    const std::size_t b = input.batch(), c = input.channels(), out_f = weight.cols();
    DenseTensor out({b, out_f, 1, 1});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t o = 0; o < out_f; ++o) {
            double sum = bias[o];
            for (std::size_t i = 0; i < c; ++i) sum += input.tensor()[n * c + i] * weight(i, o);
            out[n * out_f + o] = sum;
        }
    return FeatureBatch(std::move(out));
}

FeatureBatch add(const FeatureBatch& a, const FeatureBatch& b) {
    require(a.tensor().shape() == b.tensor().shape(), ErrorCode::InvalidArgument,
            "shortcut add shape mismatch " + shape_string(a.tensor().shape()) + " vs " +
                shape_string(b.tensor().shape()));
    return FeatureBatch(a.tensor() + b.tensor());
}

// ---------------------------------------------------------------------------

std::string_view to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::Conv: return "conv";
        case NodeKind::DecomposedGroup: return "decomposed-group";
        case NodeKind::BatchNorm: return "batch-norm";
        case NodeKind::Relu: return "relu";
        case NodeKind::AvgPool: return "average-pool";
        case NodeKind::GlobalAvgPool: return "global-average-pool";
        case NodeKind::ShortcutAdd: return "shortcut-add";
        case NodeKind::FullyConnected: return "fully-connected";
    }
    return "unknown";
}

std::optional<NodeKind> node_kind_from_string(std::string_view s) {
    for (auto k : {NodeKind::Conv, NodeKind::DecomposedGroup, NodeKind::BatchNorm, NodeKind::Relu,
                   NodeKind::AvgPool, NodeKind::GlobalAvgPool, NodeKind::ShortcutAdd, NodeKind::FullyConnected}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

ModelSpec::ModelSpec(std::vector<Node> nodes, ModelMetadata metadata) : metadata_(std::move(metadata)) {
    nodes_.reserve(nodes.size());
    for (auto& n : nodes) nodes_.push_back(std::make_shared<const Node>(std::move(n)));
    validate();
}

const Node& ModelSpec::node(std::string_view name) const {
    auto i = find(name);
    if (!i) raise(ErrorCode::NotFound, "no node named '" + std::string(name) + "'");
    return *nodes_[*i];
}

std::optional<std::size_t> ModelSpec::find(std::string_view name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i]->name == name) return i;
    return std::nullopt;
}

std::vector<std::string> ModelSpec::conv_layers() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
        if (n->is_conv_like()) out.push_back(n->name);
    return out;
}

std::vector<std::string> ModelSpec::main_layers() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
        if (n->is_conv_like() && n->conv.role == LayerRole::Main) out.push_back(n->name);
    return out;
}

std::vector<std::string> ModelSpec::decomposable_layers() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
        if (n->kind == NodeKind::Conv && n->conv.decomposable) out.push_back(n->name);
    return out;
}

std::optional<std::string> ModelSpec::group_of(std::string_view layer) const {
    for (const auto& [group, layers] : metadata_.groups)
        if (std::find(layers.begin(), layers.end(), layer) != layers.end()) return group;
    return std::nullopt;
}

std::optional<std::size_t> ModelSpec::input_index(std::size_t index) const {
    const Node& n = *nodes_.at(index);
    if (n.input.empty()) {
        if (index == 0) return std::nullopt;
        return index - 1;
    }
    auto i = find(n.input);
    if (!i) raise(ErrorCode::NotFound, "node '" + n.name + "' reads unknown node '" + n.input + "'");
    return i;
}

ModelSpec ModelSpec::with_node(std::size_t index, Node replacement) const {
    ModelSpec copy = *this;
    copy.nodes_.at(index) = std::make_shared<const Node>(std::move(replacement));
    copy.validate();
    return copy;
}

bool ModelSpec::operator==(const ModelSpec& other) const {
    if (metadata_ != other.metadata_ || nodes_.size() != other.nodes_.size()) return false;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i] != other.nodes_[i] && !(*nodes_[i] == *other.nodes_[i])) return false;
    return true;
}

void ModelSpec::validate() const {
    struct Dims {
        std::size_t c, h, w;
    };
    std::vector<Dims> dims;
    dims.reserve(nodes_.size());
    std::unordered_map<std::string, std::size_t> seen;
    const Dims model_in{metadata_.input.channels, metadata_.input.height, metadata_.input.width};
    require(model_in.c >= 1 && model_in.h >= 1 && model_in.w >= 1, ErrorCode::InvalidArgument,
            "model input dimensions must be >= 1");

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = *nodes_[i];
        const std::string where = "node '" + n.name + "': ";
        require(!n.name.empty(), ErrorCode::InvalidArgument, "node " + std::to_string(i) + " has no name");
        require(seen.emplace(n.name, i).second, ErrorCode::DuplicateName, "duplicate node name '" + n.name + "'");

        auto resolve = [&](const std::string& ref) -> Dims {
            if (ref.empty()) return i == 0 ? model_in : dims[i - 1];
            auto it = seen.find(ref);
            require(it != seen.end() && it->second < i, ErrorCode::InvalidArgument,
                    where + "operand '" + ref + "' is not an earlier node");
            return dims[it->second];
        };
        const Dims in = resolve(n.input);
        Dims out = in;

        switch (n.kind) {
            case NodeKind::Conv:
            case NodeKind::DecomposedGroup: {
                const auto& g = n.conv;
                require(g.in_channels >= 1 && g.out_channels >= 1 && g.kernel_size >= 1 && g.stride >= 1,
                        ErrorCode::InvalidArgument, where + "conv counts must be >= 1");
                require(g.in_channels == in.c, ErrorCode::InvalidArgument,
                        where + "expects " + std::to_string(g.in_channels) + " input channels, gets " +
                            std::to_string(in.c));
                out = {g.out_channels, conv_output_size(in.h, g.kernel_size, g.stride, g.padding),
                       conv_output_size(in.w, g.kernel_size, g.stride, g.padding)};
                require(out.h == g.out_h && out.w == g.out_w, ErrorCode::InvalidArgument,
                        where + "declared output " + std::to_string(g.out_h) + "x" + std::to_string(g.out_w) +
                            " but geometry gives " + std::to_string(out.h) + "x" + std::to_string(out.w));
                if (n.kind == NodeKind::Conv) {
                    require(n.kernel.shape() == Shape{g.in_channels, g.out_channels, g.kernel_size, g.kernel_size},
                            ErrorCode::DimMismatch,
                            where + "kernel shape " + shape_string(n.kernel.shape()) + " does not match layer");
                } else {
                    require(n.factors.has_value(), ErrorCode::InvalidArgument, where + "missing Tucker factors");
                    const auto& f = *n.factors;
                    require(f.core.rank() == 4 && f.core.dim(2) == g.kernel_size && f.core.dim(3) == g.kernel_size,
                            ErrorCode::DimMismatch, where + "core spatial dims do not match kernel size");
                    require(f.factor_in.rows() == g.in_channels && f.factor_in.cols() == f.core.dim(0),
                            ErrorCode::DimMismatch, where + "factor_in shape mismatch");
                    require(f.factor_out.cols() == g.out_channels && f.factor_out.rows() == f.core.dim(1),
                            ErrorCode::DimMismatch, where + "factor_out shape mismatch");
                }
                require(i + 1 < nodes_.size() && nodes_[i + 1]->kind == NodeKind::BatchNorm &&
                            (nodes_[i + 1]->input.empty() || nodes_[i + 1]->input == n.name),
                        ErrorCode::InvalidArgument, where + "conv layer must be followed directly by batch-norm");
                break;
            }
            case NodeKind::BatchNorm:
                require(n.scale.size() == in.c && n.shift.size() == in.c, ErrorCode::DimMismatch,
                        where + "batch-norm parameters do not match " + std::to_string(in.c) + " channels");
                break;
            case NodeKind::Relu:
                break;
            case NodeKind::AvgPool:
                require(n.pool_kernel >= 1 && n.pool_stride >= 1, ErrorCode::InvalidArgument,
                        where + "pool kernel/stride must be >= 1");
                out.h = conv_output_size(in.h, n.pool_kernel, n.pool_stride, n.pool_padding);
                out.w = conv_output_size(in.w, n.pool_kernel, n.pool_stride, n.pool_padding);
                break;
            case NodeKind::GlobalAvgPool:
                out.h = out.w = 1;
                break;
            case NodeKind::ShortcutAdd: {
                require(!n.source.empty(), ErrorCode::InvalidArgument, where + "shortcut-add needs a source");
                const Dims src = resolve(n.source);
                require(src.c == in.c && src.h == in.h && src.w == in.w, ErrorCode::InvalidArgument,
                        where + "shortcut endpoints have different shapes");
                break;
            }
            case NodeKind::FullyConnected:
                require(in.h == 1 && in.w == 1, ErrorCode::InvalidArgument,
                        where + "fully-connected input must be spatially 1x1");
                require(n.fc_weight.rows() == in.c && n.fc_bias.size() == n.fc_weight.cols(), ErrorCode::DimMismatch,
                        where + "fully-connected weight shape mismatch");
                out = {n.fc_weight.cols(), 1, 1};
                break;
        }
        dims.push_back(out);
    }

    for (const auto& [group, layers] : metadata_.groups)
        for (const auto& l : layers)
            require(seen.contains(l), ErrorCode::InvalidArgument,
                    "group '" + group + "' names unknown layer '" + l + "'");
}

// ---------------------------------------------------------------------------

namespace {

FeatureBatch apply_node(const Node& n, const FeatureBatch& in, const FeatureBatch* source) {
    switch (n.kind) {
        case NodeKind::Conv:
        case NodeKind::DecomposedGroup: return apply_conv_like(n, in);
        case NodeKind::BatchNorm: return batch_norm(in, n.scale, n.shift, n.eps);
        case NodeKind::Relu: return relu(in);
        case NodeKind::AvgPool: return avg_pool(in, n.pool_kernel, n.pool_stride, n.pool_padding);
        case NodeKind::GlobalAvgPool: return global_avg_pool(in);
        case NodeKind::ShortcutAdd: return add(in, *source);
        case NodeKind::FullyConnected: return fully_connected(in, n.fc_weight, n.fc_bias);
    }
    raise(ErrorCode::InvalidArgument, "unknown node kind");
}

FeatureBatch evaluate_until(const ModelSpec& model, const FeatureBatch& batch, std::size_t stop,
                            const NodeVisitor* visit = nullptr) {
    require(batch.channels() == model.metadata().input.channels, ErrorCode::InvalidArgument,
            "model expects " + std::to_string(model.metadata().input.channels) + "-channel input, batch has " +
                std::to_string(batch.channels()));

    std::vector<std::optional<std::size_t>> primary(stop + 1);
    std::vector<std::optional<std::size_t>> secondary(stop + 1);
    std::vector<std::size_t> last_use(stop + 1, 0);
    for (std::size_t i = 0; i <= stop; ++i) {
        primary[i] = model.input_index(i);
        if (primary[i]) last_use[*primary[i]] = std::max(last_use[*primary[i]], i);
        if (model.node(i).kind == NodeKind::ShortcutAdd) {
            secondary[i] = model.find(model.node(i).source);
            last_use[*secondary[i]] = std::max(last_use[*secondary[i]], i);
        }
    }

    std::vector<std::optional<FeatureBatch>> outputs(stop + 1);
    for (std::size_t i = 0; i <= stop; ++i) {
        const FeatureBatch& in = primary[i] ? *outputs[*primary[i]] : batch;
        const FeatureBatch* src = secondary[i] ? &*outputs[*secondary[i]] : nullptr;
        outputs[i] = apply_node(model.node(i), in, src);
        if (visit) (*visit)(i, in, *outputs[i]);
        if (primary[i] && last_use[*primary[i]] == i && *primary[i] != stop) outputs[*primary[i]].reset();
        if (secondary[i] && last_use[*secondary[i]] == i && *secondary[i] != stop) outputs[*secondary[i]].reset();
    }
    return std::move(*outputs[stop]);
}

std::size_t conv_index(const ModelSpec& model, std::string_view layer) {
    auto i = model.find(layer);
    if (!i) raise(ErrorCode::NotFound, "no layer named '" + std::string(layer) + "'");
    require(model.node(*i).is_conv_like(), ErrorCode::InvalidArgument,
            "node '" + std::string(layer) + "' is not a convolution layer");
    return *i;
}

}  // namespace

FeatureBatch apply_conv_like(const Node& n, const FeatureBatch& input) {
    if (n.kind == NodeKind::Conv) return conv2d_forward(input, n.kernel, n.conv.stride, n.conv.padding);
    require(n.kind == NodeKind::DecomposedGroup && n.factors.has_value(), ErrorCode::InvalidArgument,
            "node '" + n.name + "' is not a convolution layer");
    return decomposed_forward(input, *n.factors, n.conv.stride, n.conv.padding);
}

FeatureBatch forward_to_node(const ModelSpec& model, const FeatureBatch& batch, std::string_view node) {
    auto i = model.find(node);
    if (!i) raise(ErrorCode::NotFound, "no node named '" + std::string(node) + "'");
    return evaluate_until(model, batch, *i);
}

FeatureBatch forward_to_layer(const ModelSpec& model, const FeatureBatch& batch, std::string_view layer) {
    return evaluate_until(model, batch, conv_index(model, layer) + 1);
}

FeatureBatch layer_input(const ModelSpec& model, const FeatureBatch& batch, std::string_view layer) {
    const std::size_t i = conv_index(model, layer);
    auto producer = model.input_index(i);
    if (!producer) return batch;
    return evaluate_until(model, batch, *producer);
}

FeatureBatch forward(const ModelSpec& model, const FeatureBatch& batch) {
    require(model.size() > 0, ErrorCode::InvalidArgument, "empty model");
    return evaluate_until(model, batch, model.size() - 1);
}

void forward_visit(const ModelSpec& model, const FeatureBatch& batch, const NodeVisitor& visit) {
    require(model.size() > 0, ErrorCode::InvalidArgument, "empty model");
    evaluate_until(model, batch, model.size() - 1, &visit);
}

ModelSpec replace_layer(const ModelSpec& model, std::string_view layer, TuckerFactors factors) {
    const std::size_t i = conv_index(model, layer);
    const Node& old = model.node(i);
    require(old.kind == NodeKind::Conv, ErrorCode::Policy, "layer '" + old.name + "' is already decomposed");
    require(old.conv.decomposable, ErrorCode::Policy, "layer '" + old.name + "' is marked non-decomposable");
    require(factors.in_channels() == old.conv.in_channels && factors.out_channels() == old.conv.out_channels &&
                factors.kernel_size() == old.conv.kernel_size,
            ErrorCode::InvalidArgument,
            "Tucker factors for '" + old.name + "' do not match its " + std::to_string(old.conv.in_channels) + "x" +
                std::to_string(old.conv.out_channels) + "x" + std::to_string(old.conv.kernel_size) + " kernel");
    Node replacement = old;
    replacement.kind = NodeKind::DecomposedGroup;
    replacement.kernel = DenseTensor();
    replacement.factors = std::move(factors);
    return model.with_node(i, std::move(replacement));
}

DenseTensor layer_kernel(const Node& node) {
    if (node.kind == NodeKind::Conv) return node.kernel;
    require(node.kind == NodeKind::DecomposedGroup && node.factors.has_value(), ErrorCode::InvalidArgument,
            "node '" + node.name + "' has no kernel");
    return reconstruct(*node.factors);
}

DenseTensor he_normal_kernel(Rng& rng, std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_channels * kernel_size * kernel_size));
    return rng.normal_tensor({in_channels, out_channels, kernel_size, kernel_size}, stddev);
}

}  // namespace tkc
