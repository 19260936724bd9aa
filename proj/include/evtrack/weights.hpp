// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "evtrack/model_config.hpp"
#include "evtrack/nn/tensor.hpp"

namespace evtrack {

/// Named-tensor store holding every learnable parameter.
///
/// File layout (little-endian): "PSMW", u32 version = 1, u32 tensor count,
/// then per tensor u16 name length, UTF-8 name, u8 rank, u32 dims[rank],
/// f32 payload, and finally the u64 FNV-1a hash of all preceding bytes.
/// Tensors are written in name order, so save(load(f)) == f.
class ModelWeights {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void set(const std::string& name, nn::Tensor t);
  const nn::Tensor& get(const std::string& name) const;
  nn::Tensor& mutable_tensor(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  const std::map<std::string, nn::Tensor>& tensors() const { return tensors_; }

  /// Checks the name set and every shape against the config, and that all
  /// values are finite. Throws FormatError naming the first problem.
  void audit(const ModelConfig& config) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  /// Parses the container only; call audit() before use.
  static ModelWeights load(std::istream& in);
  static ModelWeights load(const std::filesystem::path& path);
  /// load() followed by audit().
  static ModelWeights load(const std::filesystem::path& path, const ModelConfig& config);

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;

 private:
  std::map<std::string, nn::Tensor> tensors_;
};

/// Every parameter name with its shape for a config.
std::map<std::string, nn::Shape> expected_shapes(const ModelConfig& config);

namespace names {
std::string block(std::size_t layer, const std::string& leaf);  // layer is 1-based
std::string expert(std::size_t layer, std::size_t expert, const std::string& leaf);
std::string router(std::size_t layer, const std::string& leaf);
std::string transform(std::size_t stage, const std::string& leaf);
std::string halting(std::size_t layer, const std::string& leaf);
std::string head(const std::string& branch, const std::string& leaf);
}  // namespace names

struct SelftestWeightOptions {
  std::uint64_t seed = 0;
  /// Bias of every halting predictor; positive values make early halting likely.
  float halting_bias = 0.0f;
};

/// Shape-correct Xavier-uniform weights from a seed. Norm gains are 1, norm
/// shifts 0, folded batch norm is identity, and the SA-MoE experts are the
/// exact hidden-dimension split of each block's FFN.
ModelWeights make_selftest_weights(const ModelConfig& config, const SelftestWeightOptions& opts);

}  // namespace evtrack
