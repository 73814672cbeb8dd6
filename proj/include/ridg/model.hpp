#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ridg/tensor.hpp"

namespace ridg {

enum class InitScheme { uniform_fan_in, zeros };

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t feature_dim = 16;
  std::size_t class_count = 2;
  InitScheme init = InitScheme::uniform_fan_in;
  std::uint64_t seed = 0;

  // Throws ConfigError unless D >= 1, K >= 2 and every width >= 1.
  void validate() const;
};

template <typename Real>
struct DenseLayer {
  Tensor<Real> weight;  // in x out
  Tensor<Real> bias;    // 1 x out
};

// MLP f: relu between layers, no activation after the last one so features
// may take either sign.
template <typename Real>
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  explicit FeatureExtractor(std::vector<DenseLayer<Real>> layers);

  Tensor<Real> forward(Tape<Real>& tape, const Tensor<Real>& x) const;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  const std::vector<DenseLayer<Real>>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer<Real>> layers_;
};

// Bias-free linear classifier: logits = z W.
template <typename Real>
class LinearHead {
 public:
  LinearHead() = default;
  explicit LinearHead(Tensor<Real> weight);

  Tensor<Real> forward(Tape<Real>& tape, const Tensor<Real>& z) const;

  const Tensor<Real>& weight() const { return weight_; }
  std::size_t feature_dim() const { return weight_.dim(0); }
  std::size_t class_count() const { return weight_.dim(1); }

 private:
  Tensor<Real> weight_;  // D x K
};

template <typename Real>
struct Model {
  ModelConfig config;
  FeatureExtractor<Real> features;
  LinearHead<Real> head;

  // Weights then biases per layer, head weight last.
  std::vector<Tensor<Real>> parameters() const;

  // Deep copy; the clone shares no storage with *this.
  Model clone() const;
};

template <typename Real>
Model<Real> init_model(const ModelConfig& config);

template <typename Real>
Tensor<Real> forward_features(const Model<Real>& model, Tape<Real>& tape,
                              const Tensor<Real>& x);

template <typename Real>
Tensor<Real> forward_logits(const LinearHead<Real>& head, Tape<Real>& tape,
                            const Tensor<Real>& z);

// JSON checkpoint: header (format, precision, seed, config) plus every layer
// as shape + row-major values.
template <typename Real>
void save_checkpoint(const Model<Real>& model,
                     const std::filesystem::path& path);

template <typename Real>
Model<Real> load_checkpoint(const std::filesystem::path& path);

template <typename Real>
constexpr const char* precision_name() {
  return sizeof(Real) == sizeof(float) ? "f32" : "f64";
}

}  // namespace ridg
