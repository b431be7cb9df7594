#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "midline/types.hpp"

namespace midline {

struct ModelConfig {
  int input_rows = 160;  // size after padding; divisible by 2^depth
  int input_cols = 160;
  int depth = 3;          // encoder resolution levels
  int base_channels = 16;
  int shared_layers = 2;  // residual blocks shared by both heads
  uint32_t seed = 0;

  void validate() const;
};

/// Forward-pass results. The midline head emits one probability
/// distribution per image row (rows of midline_prob sum to 1); the limits
/// head emits one midline-presence probability per row.
struct NetworkOutputs {
  int batch = 0, rows = 0, cols = 0;
  std::vector<float> midline_logits;  // batch x rows x cols
  std::vector<float> midline_prob;    // row-wise softmax of the logits
  std::vector<float> limits_prob;     // batch x rows, in [0, 1]

  ImageF logits_slice(int b) const;
  ImageF prob_slice(int b) const;
  std::vector<double> limits_slice(int b) const;
};

/// Numerically shifted softmax along Ox, independently per row.
ImageF row_softmax(const ImageF& logits);

namespace detail {
template <typename T>
class Net;
}

/// The two-headed convolutional network: a shared residual trunk feeding
/// (a) a UNet-style encoder-decoder that ends in a 1-channel logit map and
/// (b) two residual blocks -> global max pool along Ox -> two 1D
/// convolutions along Oy -> sigmoid.
class Model {
public:
  explicit Model(const ModelConfig& config);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ModelConfig& config() const;
  size_t parameter_count() const;

  /// Deterministic, state-free forward pass over config-sized slices.
  /// threads = 0 picks MIDLINE_THREADS or the hardware thread count.
  NetworkOutputs forward(std::span<const ImageF> batch, int threads = 0) const;

  // Checkpoint container: "midline-kit.ckpt.v1" magic, JSON header with the
  // config and named parameter arrays, raw float32 payload.
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  detail::Net<float>& net();
  const detail::Net<float>& net() const;

private:
  std::unique_ptr<detail::Net<float>> net_;
};

}  // namespace midline
