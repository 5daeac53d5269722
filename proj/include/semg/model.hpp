#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semg/dsp.hpp"
#include "semg/nn/layers.hpp"

namespace semg::model {

using nn::Mode;
using nn::Tensor;

struct ModelConfig {
  std::uint32_t stem_channels = 16;
  std::uint32_t feature_channels = 32;
  std::uint32_t attention_hidden = 32;
  std::uint32_t kernel_h = 3;
  std::uint32_t kernel_w = 3;
  std::uint32_t input_freq = 129;
  std::uint32_t input_frames = 32;
  std::uint32_t input_channels = 2;
  std::uint32_t n_classes = 3;
  std::uint64_t seed = 0;
  bool standardize = true;

  /// Throws InputError on inconsistent values.
  void validate() const;
  /// Equal architecture (everything except the seed).
  bool same_architecture(const ModelConfig& o) const;
  bool operator==(const ModelConfig&) const = default;
};

/// Default config with a reduced shape, used by gradient checks.
ModelConfig reduced_config();

template <typename T>
struct StemParams {
  nn::ConvParams<T> conv;
  nn::BatchNormParams<T> bn;
  bool operator==(const StemParams&) const = default;
};

template <typename T>
struct FeatureBlockParams {
  nn::ConvParams<T> conv1;
  nn::BatchNormParams<T> bn1;
  nn::ConvParams<T> conv2;
  nn::BatchNormParams<T> bn2;
  nn::ConvParams<T> proj;  // 1x1 skip projection
  bool operator==(const FeatureBlockParams&) const = default;
};

template <typename T>
struct AttentionParams {
  nn::DenseParams<T> fc1;  // freq -> hidden
  nn::DenseParams<T> fc2;  // hidden -> freq
  bool operator==(const AttentionParams&) const = default;
};

/// Per input channel z-score statistics of the training features.
template <typename T>
struct Standardization {
  std::vector<T> mean;
  std::vector<T> std;
  bool operator==(const Standardization&) const = default;
};

template <typename T>
struct ModelState {
  ModelConfig config;
  StemParams<T> stem;
  FeatureBlockParams<T> feature;
  AttentionParams<T> attention;
  nn::DenseParams<T> head;
  Standardization<T> standardization;

  bool operator==(const ModelState&) const = default;
};

/// Gradients share the state layout; BN running statistics and the
/// standardization block are unused.
template <typename T>
using ModelGrads = ModelState<T>;

/// Named views over trainable buffers in the fixed serialization order.
template <typename T>
std::vector<std::pair<std::string, std::span<T>>> trainable_buffers(ModelState<T>& s);

/// Non-trainable buffers (BN running statistics, standardization), fixed order.
template <typename T>
std::vector<std::pair<std::string, std::span<T>>> state_buffers(ModelState<T>& s);

template <typename T>
std::size_t trainable_param_count(const ModelState<T>& s);

/// He-normal (variance 2 / fan_in) weights, zero biases, identity BN.
template <typename T>
ModelState<T> init(const ModelConfig& config, std::uint64_t seed);

template <typename To, typename From>
ModelState<To> cast_state(const ModelState<From>& s);

/// Computes per-channel mean/std over the training features and stores them.
template <typename T>
void fit_standardization(ModelState<T>& s, std::span<const dsp::FeatureTensor> features);

/// Stacks feature tensors into a (batch, freq, frames, channels) tensor.
template <typename T>
Tensor<T> stack_features(std::span<const dsp::FeatureTensor> features, std::span<const std::size_t> indices = {});

// ---- sub-blocks -----------------------------------------------------------------

template <typename T>
struct StemCache {
  Tensor<T> x;
  nn::BatchNormCache<T> bn;
  Tensor<T> pre_relu;
};

/// conv(3x3) -> batchnorm -> relu.
template <typename T>
Tensor<T> stem_forward(const Tensor<T>& x, StemParams<T>& p, Mode mode, StemCache<T>* cache = nullptr);
template <typename T>
Tensor<T> stem_backward(const StemCache<T>& cache, const StemParams<T>& p, const Tensor<T>& gy, StemParams<T>& grads);

template <typename T>
struct FeatureBlockCache {
  Tensor<T> x;
  nn::BatchNormCache<T> bn1;
  Tensor<T> b1;
  Tensor<T> r1;
  nn::BatchNormCache<T> bn2;
  Tensor<T> sum;
};

/// Residual block: relu(bn(conv(relu(bn(conv(x))))) + proj(x)).
template <typename T>
Tensor<T> feature_block_forward(const Tensor<T>& x, FeatureBlockParams<T>& p, Mode mode,
                                FeatureBlockCache<T>* cache = nullptr);
template <typename T>
Tensor<T> feature_block_backward(const FeatureBlockCache<T>& cache, const FeatureBlockParams<T>& p,
                                 const Tensor<T>& gy, FeatureBlockParams<T>& grads);

template <typename T>
struct AttentionCache {
  Tensor<T> x;
  Tensor<T> desc;
  Tensor<T> h_pre;
  Tensor<T> h;
  Tensor<T> w;
};

template <typename T>
struct AttentionOutput {
  Tensor<T> y;
  Tensor<T> weights;  // (batch, freq), each in (0, 1)
};

/// Spectral gate: w[b,f] = sigmoid(fc2(relu(fc1(mean_{t,c} x[b,f,:,:])))),
/// y = w[b,f] * x[b,f,t,c].
template <typename T>
AttentionOutput<T> attention_block_forward(const Tensor<T>& x, const AttentionParams<T>& p,
                                           AttentionCache<T>* cache = nullptr);
template <typename T>
Tensor<T> attention_block_backward(const AttentionCache<T>& cache, const AttentionParams<T>& p, const Tensor<T>& gy,
                                   AttentionParams<T>& grads);

// ---- full network -----------------------------------------------------------------

template <typename T>
struct ForwardCache {
  Tensor<T> x_std;
  StemCache<T> stem;
  Tensor<T> stem_out;
  AttentionCache<T> attention;
  FeatureBlockCache<T> feature;
  Tensor<T> flat;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  Tensor<T> probs;
  Tensor<T> attention_weights;
};

/// Train mode uses batch statistics and updates BN running stats in `s`.
template <typename T>
ForwardResult<T> forward(ModelState<T>& s, const Tensor<T>& x, Mode mode, ForwardCache<T>* cache = nullptr);

/// Inference only; never mutates the state.
template <typename T>
ForwardResult<T> forward_infer(const ModelState<T>& s, const Tensor<T>& x);

/// Back-propagates d loss / d logits through a cached train-mode forward.
/// Returns grad w.r.t. the raw (unstandardized) input.
template <typename T>
Tensor<T> backward(const ModelState<T>& s, const ForwardCache<T>& cache, const Tensor<T>& grad_logits,
                   ModelGrads<T>& grads);

/// Argmax, ties to the lowest class index.
int predict(std::span<const double> probs);

template <typename T>
int predict_row(const Tensor<T>& probs, std::size_t row) {
  const std::size_t k = probs.dim(1);
  std::vector<double> p(k);
  for (std::size_t i = 0; i < k; ++i) p[i] = static_cast<double>(probs[row * k + i]);
  return predict(p);
}

// ---- model file ("SMDL") ------------------------------------------------------------

template <typename T>
std::vector<std::uint8_t> serialize(const ModelState<T>& s);
template <typename T>
ModelState<T> deserialize(std::span<const std::uint8_t> bytes);

template <typename T>
void save(const ModelState<T>& s, const std::filesystem::path& path);
template <typename T>
ModelState<T> load(const std::filesystem::path& path);
/// Throws ArtifactMismatch when the stored architecture differs from `expected`.
template <typename T>
ModelState<T> load(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace semg::model
