#include <algorithm>
#include <filesystem>
#include <unordered_map>

#include <fmt/format.h>

#include "json.hpp"
#include "tkc/io.hpp"

namespace tkc {

using Json = nlohmann::ordered_json;

namespace {

constexpr int kModelFormatVersion = 1;

std::string_view role_name(LayerRole r) { return r == LayerRole::Main ? "main" : "shortcut"; }

LayerRole role_from(const std::string& s, const std::string& node) {
    if (s == "main") return LayerRole::Main;
    if (s == "shortcut") return LayerRole::Shortcut;
    raise(ErrorCode::Parse, fmt::format("node '{}': unknown role '{}'", node, s));
}

DenseTensor vector_tensor(const std::vector<double>& v) { return DenseTensor({v.size()}, v); }

DenseTensor matrix_tensor(const Matrix& m) {
    return DenseTensor({m.rows(), m.cols()}, std::vector<double>(m.data().begin(), m.data().end()));
}

template <typename T>
T field(const Json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) raise(ErrorCode::Parse, fmt::format("{}: missing field '{}'", where, key));
    try {
        return it->get<T>();
    } catch (const Json::exception& e) {
        raise(ErrorCode::Parse, fmt::format("{}: field '{}' has the wrong type ({})", where, key, e.what()));
    }
}

class WeightPool {
public:
    explicit WeightPool(const std::vector<NamedTensor>& weights) {
        for (const auto& w : weights) {
            require(pool_.emplace(w.name, w.tensor).second, ErrorCode::DuplicateName,
                    "duplicate weight tensor '" + w.name + "'");
        }
    }

    DenseTensor take(const std::string& name, const Shape& expected) {
        auto it = pool_.find(name);
        if (it == pool_.end()) raise(ErrorCode::NotFound, "weight tensor '" + name + "' is missing");
        require(it->second.shape() == expected, ErrorCode::DimMismatch,
                fmt::format("weight tensor '{}' has shape {}, the model declares {}", name,
                            shape_string(it->second.shape()), shape_string(expected)));
        DenseTensor t = std::move(it->second);
        pool_.erase(it);
        return t;
    }

    std::vector<double> take_vector(const std::string& name, std::size_t n) {
        return take(name, {n}).values();
    }

    Matrix take_matrix(const std::string& name, std::size_t rows, std::size_t cols) {
        return Matrix(rows, cols, take(name, {rows, cols}).values());
    }

    void expect_empty() const {
        if (pool_.empty()) return;
        std::vector<std::string> names;
        for (const auto& [name, _] : pool_) names.push_back(name);
        std::sort(names.begin(), names.end());
        raise(ErrorCode::Parse, "weight tensor '" + names.front() + "' is not referenced by the model");
    }

private:
    std::unordered_map<std::string, DenseTensor> pool_;
};

}  // namespace

std::string model_to_json(const ModelSpec& model, const std::string& weights_file) {
    const auto& meta = model.metadata();
    Json doc;
    doc["format"] = "tkc-model";
    doc["version"] = kModelFormatVersion;
    doc["weights"] = weights_file;

    Json m;
    m["name"] = meta.name;
    m["seed"] = meta.seed;
    m["input"] = {{"channels", meta.input.channels}, {"height", meta.input.height}, {"width", meta.input.width}};
    Json groups = Json::object();
    for (const auto& [g, layers] : meta.groups) groups[g] = layers;
    m["groups"] = groups;
    doc["metadata"] = m;

    Json nodes = Json::array();
    for (std::size_t i = 0; i < model.size(); ++i) {
        const Node& n = model.node(i);
        Json j;
        j["name"] = n.name;
        j["kind"] = std::string(to_string(n.kind));
        if (!n.input.empty()) j["input"] = n.input;
        if (!n.source.empty()) j["source"] = n.source;
        switch (n.kind) {
            case NodeKind::Conv:
            case NodeKind::DecomposedGroup: {
                const auto& c = n.conv;
                j["in_channels"] = c.in_channels;
                j["out_channels"] = c.out_channels;
                j["kernel_size"] = c.kernel_size;
                j["stride"] = c.stride;
                j["padding"] = c.padding;
                j["out_h"] = c.out_h;
                j["out_w"] = c.out_w;
                j["decomposable"] = c.decomposable;
                j["role"] = std::string(role_name(c.role));
                if (n.kind == NodeKind::DecomposedGroup) {
                    j["rank_in"] = n.factors->rank_in();
                    j["rank_out"] = n.factors->rank_out();
                }
                break;
            }
            case NodeKind::BatchNorm:
                j["channels"] = n.scale.size();
                j["eps"] = n.eps;
                break;
            case NodeKind::AvgPool:
                j["kernel"] = n.pool_kernel;
                j["stride"] = n.pool_stride;
                j["padding"] = n.pool_padding;
                break;
            case NodeKind::FullyConnected:
                j["in_features"] = n.fc_weight.rows();
                j["out_features"] = n.fc_weight.cols();
                break;
            case NodeKind::Relu:
            case NodeKind::GlobalAvgPool:
            case NodeKind::ShortcutAdd:
                break;
        }
        nodes.push_back(std::move(j));
    }
    doc["nodes"] = nodes;
    return doc.dump(2) + "\n";
}

std::vector<NamedTensor> model_weights(const ModelSpec& model) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < model.size(); ++i) {
        const Node& n = model.node(i);
        switch (n.kind) {
            case NodeKind::Conv: out.push_back({n.name + "/kernel", n.kernel}); break;
            case NodeKind::DecomposedGroup:
                out.push_back({n.name + "/core", n.factors->core});
                out.push_back({n.name + "/factor_in", matrix_tensor(n.factors->factor_in)});
                out.push_back({n.name + "/factor_out", matrix_tensor(n.factors->factor_out)});
                break;
            case NodeKind::BatchNorm:
                out.push_back({n.name + "/scale", vector_tensor(n.scale)});
                out.push_back({n.name + "/shift", vector_tensor(n.shift)});
                break;
            case NodeKind::FullyConnected:
                out.push_back({n.name + "/weight", matrix_tensor(n.fc_weight)});
                out.push_back({n.name + "/bias", vector_tensor(n.fc_bias)});
                break;
            default: break;
        }
    }
    return out;
}

ModelSpec model_from_json(std::string_view text, const std::vector<NamedTensor>& weights) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        raise(ErrorCode::Parse, fmt::format("model file is not valid JSON: {}", e.what()));
    }
    require(doc.is_object(), ErrorCode::Parse, "model file must hold a JSON object");
    const auto version = field<int>(doc, "version", "model");
    require(version == kModelFormatVersion, ErrorCode::VersionMismatch,
            fmt::format("unsupported model format version {} (expected {})", version, kModelFormatVersion));

    const Json& jm = doc.contains("metadata") ? doc["metadata"] : Json::object();
    ModelMetadata meta;
    meta.name = jm.value("name", std::string{});
    meta.seed = jm.value("seed", std::uint64_t{0});
    if (jm.contains("input")) {
        const Json& in = jm["input"];
        meta.input.channels = field<std::size_t>(in, "channels", "metadata.input");
        meta.input.height = field<std::size_t>(in, "height", "metadata.input");
        meta.input.width = field<std::size_t>(in, "width", "metadata.input");
    }
    if (jm.contains("groups")) {
        for (const auto& [g, layers] : jm["groups"].items())
            meta.groups[g] = layers.get<std::vector<std::string>>();
    }

    WeightPool pool(weights);
    std::vector<Node> nodes;
    const auto& jnodes = doc.contains("nodes") ? doc["nodes"] : Json::array();
    require(jnodes.is_array(), ErrorCode::Parse, "'nodes' must be an array");
    for (const Json& j : jnodes) {
        Node n;
        n.name = field<std::string>(j, "name", "node");
        const std::string where = "node '" + n.name + "'";
        const auto kind_name = field<std::string>(j, "kind", where);
        auto kind = node_kind_from_string(kind_name);
        if (!kind) raise(ErrorCode::Parse, fmt::format("{}: unknown kind '{}'", where, kind_name));
        n.kind = *kind;
        n.input = j.value("input", std::string{});
        n.source = j.value("source", std::string{});
        switch (n.kind) {
            case NodeKind::Conv:
            case NodeKind::DecomposedGroup: {
                auto& c = n.conv;
                c.in_channels = field<std::size_t>(j, "in_channels", where);
                c.out_channels = field<std::size_t>(j, "out_channels", where);
                c.kernel_size = field<std::size_t>(j, "kernel_size", where);
                c.stride = field<std::size_t>(j, "stride", where);
                c.padding = field<std::size_t>(j, "padding", where);
                c.out_h = field<std::size_t>(j, "out_h", where);
                c.out_w = field<std::size_t>(j, "out_w", where);
                c.decomposable = field<bool>(j, "decomposable", where);
                c.role = role_from(j.value("role", std::string("main")), n.name);
                const std::size_t d = c.kernel_size;
                if (n.kind == NodeKind::Conv) {
                    n.kernel = pool.take(n.name + "/kernel", {c.in_channels, c.out_channels, d, d});
                } else {
                    const auto ri = field<std::size_t>(j, "rank_in", where);
                    const auto ro = field<std::size_t>(j, "rank_out", where);
                    TuckerFactors f;
                    f.core = pool.take(n.name + "/core", {ri, ro, d, d});
                    f.factor_in = pool.take_matrix(n.name + "/factor_in", c.in_channels, ri);
                    f.factor_out = pool.take_matrix(n.name + "/factor_out", ro, c.out_channels);
                    n.factors = std::move(f);
                }
                break;
            }
            case NodeKind::BatchNorm: {
                const auto ch = field<std::size_t>(j, "channels", where);
                n.eps = field<double>(j, "eps", where);
                n.scale = pool.take_vector(n.name + "/scale", ch);
                n.shift = pool.take_vector(n.name + "/shift", ch);
                break;
            }
            case NodeKind::AvgPool:
                n.pool_kernel = field<std::size_t>(j, "kernel", where);
                n.pool_stride = field<std::size_t>(j, "stride", where);
                n.pool_padding = field<std::size_t>(j, "padding", where);
                break;
            case NodeKind::FullyConnected: {
                const auto fi = field<std::size_t>(j, "in_features", where);
                const auto fo = field<std::size_t>(j, "out_features", where);
                n.fc_weight = pool.take_matrix(n.name + "/weight", fi, fo);
                n.fc_bias = pool.take_vector(n.name + "/bias", fo);
                break;
            }
            case NodeKind::Relu:
            case NodeKind::GlobalAvgPool:
            case NodeKind::ShortcutAdd:
                break;
        }
        nodes.push_back(std::move(n));
    }
    pool.expect_empty();
    return ModelSpec(std::move(nodes), std::move(meta));
}

std::string weights_path_for(const std::string& model_path) {
    return std::filesystem::path(model_path).replace_extension(".stdt").string();
}

void save_model(const ModelSpec& model, const std::string& path, DType dtype) {
    const std::string weights = weights_path_for(path);
    require(weights != path, ErrorCode::InvalidArgument, "model path must not end in .stdt");
    write_stdt(weights, model_weights(model), dtype);
    write_file_atomic(path, model_to_json(model, std::filesystem::path(weights).filename().string()));
}

ModelSpec load_model(const std::string& path) {
    const std::string text = read_file(path);
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        raise(ErrorCode::Parse, fmt::format("{}: not valid JSON: {}", path, e.what()));
    }
    const auto weights_name = field<std::string>(doc, "weights", path);
    const auto weights_path = (std::filesystem::path(path).parent_path() / weights_name).string();
    try {
        return model_from_json(text, read_stdt(weights_path));
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

std::string thresholds_to_json(const std::vector<std::pair<std::string, double>>& thresholds) {
    Json doc;
    Json t = Json::object();
    for (const auto& [layer, value] : thresholds) t[layer] = value;
    doc["thresholds"] = t;
    return doc.dump(2) + "\n";
}

std::map<std::string, double> thresholds_from_json(std::string_view text) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        raise(ErrorCode::Parse, fmt::format("threshold file is not valid JSON: {}", e.what()));
    }
    // Accept both {"thresholds": {...}} and a bare {"layer": value} map.
    const Json& t = doc.is_object() && doc.contains("thresholds") ? doc["thresholds"] : doc;
    require(t.is_object(), ErrorCode::Parse, "thresholds must be a JSON object of layer -> value");
    std::map<std::string, double> out;
    for (const auto& [layer, value] : t.items()) {
        require(value.is_number(), ErrorCode::Parse, "threshold for '" + layer + "' is not a number");
        out[layer] = value.get<double>();
    }
    return out;
}

}  // namespace tkc
