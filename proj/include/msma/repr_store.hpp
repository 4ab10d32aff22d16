#ifndef MSMA_REPR_STORE_HPP
#define MSMA_REPR_STORE_HPP

// On-disk layer-stack dumps.
//
// A dump directory holds
//   manifest.json          model, n_layers, hidden_dim, n_heads, seq_len,
//                          n_samples, tasks[], attention_mode, provenance
//   layer_{i}.msma         hidden states of layer i (1-based), [n_samples, hidden_dim]
//   attn_{i}.msma          attention of layer i, [heads, seq, seq] ("mean" mode)
//                          or [n_samples, heads, seq, seq] ("per_sample" mode)
//   labels.csv             sample_id followed by one integer column per task
//
// Tensor file layout (little-endian):
//   "MSMA" | u16 version | u8 dtype (0 = f32) | u8 rank | u64 shape[rank] | f32 data

#include "msma/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace msma {

inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::size_t kMaxTensorRank = 4;

struct TensorFile {
  std::uint16_t version = kTensorVersion;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  std::uint64_t element_count() const;
};

std::vector<std::uint8_t> encode_tensor(const TensorFile& t);
// `name` is used only in error messages.
TensorFile decode_tensor(std::span<const std::uint8_t> bytes, const std::string& name);
void write_tensor(const std::filesystem::path& path, const TensorFile& t);
TensorFile read_tensor(const std::filesystem::path& path);

enum class Scale { local, intermediate, global, unspecified };

std::string to_string(Scale s);
Scale scale_from_string(const std::string& s);

struct TaskSpec {
  std::string name;
  int n_classes = 0;
  Scale scale = Scale::unspecified;

  bool operator==(const TaskSpec&) const = default;
};

// Attention for one layer. In "mean" mode samples == 1.
struct AttentionTensor {
  std::size_t samples = 1;
  std::size_t heads = 0;
  std::size_t seq = 0;
  std::vector<float> data;  // [samples][heads][seq][seq]

  float at(std::size_t s, std::size_t h, std::size_t i, std::size_t j) const {
    return data[((s * heads + h) * seq + i) * seq + j];
  }
  // Sample-averaged tensor as heads x (seq x seq) double matrices.
  std::vector<Matrix> head_matrices() const;

  bool operator==(const AttentionTensor&) const = default;
};

AttentionTensor attention_from_heads(const std::vector<Matrix>& heads);

struct Manifest {
  std::string model = "unknown";
  std::size_t n_layers = 0;
  std::size_t hidden_dim = 0;
  std::size_t n_heads = 0;
  std::size_t seq_len = 0;
  std::size_t n_samples = 0;
  std::vector<TaskSpec> tasks;
  std::string attention_mode = "none";  // none | mean | per_sample
  nlohmann::json provenance = nlohmann::json::object();

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

struct LayerStack {
  Manifest manifest;
  std::vector<HiddenMatrix> hidden;         // n_layers entries
  std::vector<AttentionTensor> attention;   // empty or n_layers entries
  std::vector<std::string> sample_ids;      // empty when there are no labels
  std::vector<std::vector<int>> labels;     // one column per manifest task

  std::size_t n_layers() const { return hidden.size(); }
  std::size_t n_samples() const { return hidden.empty() ? 0 : static_cast<std::size_t>(hidden[0].rows()); }
  std::size_t dim() const { return hidden.empty() ? 0 : static_cast<std::size_t>(hidden[0].cols()); }
  bool has_attention() const { return !attention.empty(); }
  bool has_labels() const { return !labels.empty(); }

  // Layer `layer` (1-based) as a double matrix.
  Matrix layer(std::size_t layer) const;
  std::optional<std::size_t> task_index(const std::string& name) const;
  // Identifier of sample i; falls back to its index when no ids were dumped.
  std::string sample_id(std::size_t i) const;

  // Checks every invariant; throws Error(validation) naming the offending field.
  void validate() const;
  // Rows `rows` of every hidden matrix and label column; attention is kept as is
  // unless it is per-sample, in which case it is subset too.
  LayerStack subset(const std::vector<std::size_t>& rows) const;

  bool operator==(const LayerStack& other) const;
};

// Validates, then writes the dump. Returns the manifest path.
std::filesystem::path write_stack(const LayerStack& stack, const std::filesystem::path& dir);
LayerStack read_stack(const std::filesystem::path& dir);

}  // namespace msma

#endif
