#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tkc/convnet.hpp"
#include "tkc/cost_model.hpp"
#include "tkc/search.hpp"

namespace tkc {

// ---------------------------------------------------------------------------
// STDT tensor container
//
//   "STDT" | u16 version | records until EOF
//   record: u16 name length | name | u8 ndim | u32 dims[ndim] | u8 dtype | data
// All integers and payloads are little-endian. dtype 1 = f32, 2 = f64.

inline constexpr std::uint16_t kStdtVersion = 1;

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

struct NamedTensor {
    std::string name;
    DenseTensor tensor;
    bool operator==(const NamedTensor&) const = default;
};

std::string encode_stdt(const std::vector<NamedTensor>& tensors, DType dtype = DType::F64);
/// f32 payloads are widened to double.
std::vector<NamedTensor> decode_stdt(std::string_view bytes);

void write_stdt(const std::string& path, const std::vector<NamedTensor>& tensors, DType dtype = DType::F64);
std::vector<NamedTensor> read_stdt(const std::string& path);

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::string& path);
/// Writes to a temporary sibling, then renames over `path`.
void write_file_atomic(const std::string& path, std::string_view content);

// ---------------------------------------------------------------------------
// Model files: a JSON topology document plus a sibling .stdt holding the weights.

std::string model_to_json(const ModelSpec& model, const std::string& weights_file);
std::vector<NamedTensor> model_weights(const ModelSpec& model);
ModelSpec model_from_json(std::string_view json, const std::vector<NamedTensor>& weights);

/// Path of the weight container written next to a model file (extension replaced by .stdt).
std::string weights_path_for(const std::string& model_path);

void save_model(const ModelSpec& model, const std::string& path, DType dtype = DType::F64);
ModelSpec load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Thresholds, curves, reports

std::string thresholds_to_json(const std::vector<std::pair<std::string, double>>& thresholds);
std::map<std::string, double> thresholds_from_json(std::string_view json);

/// "layer,gamma,distortion"; curves in the given order, samples by descending gamma.
std::string curves_to_csv(const std::vector<DistortionCurve>& curves);
std::vector<DistortionCurve> curves_from_csv(std::string_view csv);

/// Main layers in declaration order, then shortcut layers, then a total row.
std::string cost_to_csv(const CostReport& report);
/// Aligned text version of the same table, counts scaled by 1e4 (params) and 1e8 (FLOPs).
std::string cost_to_table(const CostReport& report);

std::string decisions_to_table(const std::vector<ChannelDecision>& decisions);
/// Decisions followed by the cylinder and ladder cost tables.
std::string search_report(const ArchitectureResult& result);

// ---------------------------------------------------------------------------
// Batches

/// Either a path to an STDT file holding one "batch" tensor (B x C x H x W), or
/// "synthetic:BxHxW[:seed]" for seeded standard-normal single-channel images.
FeatureBatch load_batch(const std::string& source, std::uint64_t default_seed = 0);
FeatureBatch synthetic_batch(std::size_t batch, std::size_t height, std::size_t width, std::uint64_t seed);

}  // namespace tkc
