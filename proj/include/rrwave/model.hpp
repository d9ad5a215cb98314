#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rrwave/tensor.hpp"

namespace rrwave {

struct ModelConfig {
  int w = 16;   // window seconds
  int sr = 50;  // canonical sampling rate
  std::array<int, 3> multiscale_kernels{16, 32, 64};
  std::array<int, 8> residual_filters{64, 64, 128, 128, 256, 256, 512, 512};
  int residual_kernel = 3;
  bool plain = false;  // single-path stem instead of the multi-scale module
  std::array<int, 3> head_dims{128, 64, 1};
  int plain_kernel = 32;
  int plain_stride = 5;

  void validate() const;
  int64_t input_len() const { return static_cast<int64_t>(sr) * w; }
  int64_t trunk_len() const { return input_len() / 5; }  // 10W
  int64_t trunk_in_channels() const { return plain ? 1 : 3; }
  // Channels after block i (1-based): in_channels + 2 * sum_{j<=i} F_j.
  int64_t channels_after_block(int i) const;
  int64_t trunk_out_channels() const { return channels_after_block(8); }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

struct CheckpointMeta {
  int64_t epoch = 0;
  double best_val_mse = -1.0;  // negative = unset
  std::string source_tag;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = false;
};

class Model {
 public:
  ModelConfig config;
  CheckpointMeta meta;

  static Model build(const ModelConfig& cfg, uint64_t seed);

  // (B, 50W, 1) -> (B, 1). Train mode uses batch statistics and updates the
  // batch-norm running stats in place; infer mode is pure.
  Tensor forward(Tape* tape, const Tensor& batch, BnMode mode);

  struct Audit {
    std::vector<std::pair<std::string, Shape>> stages;
    const Shape& at(const std::string& name) const;
  };
  Audit audit_shapes();

  std::vector<NamedTensor> named_tensors();
  std::vector<Tensor> trainable_params();
  int64_t param_count();
  void reset_bn_stats();

  Model clone() const;

  std::vector<uint8_t> serialize() const;
  static Model deserialize(const std::vector<uint8_t>& bytes);
  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  struct ConvLayer {
    Tensor w, b;
  };
  struct BnLayer {
    Tensor gamma, beta, running_mean, running_var;
  };
  struct Branch {
    ConvLayer conv;
    BnLayer bn;
  };
  struct Block {
    ConvLayer conv1;
    BnLayer bn;
    ConvLayer conv2;
  };
  struct DenseLayer {
    Tensor w, b;
  };

  std::vector<Branch> branches_;  // three multi-scale branches, or one plain stem
  std::vector<Block> blocks_;
  std::vector<DenseLayer> head_;

  Tensor forward_impl(Tape* tape, const Tensor& batch, BnMode mode, Audit* audit);
  friend struct ModelAccess;
};

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace rrwave
