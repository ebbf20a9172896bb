#pragma once

// Small patch CNN: conv(C1, 3x3) -> ReLU -> conv(3*C1, 3x3) -> ReLU ->
// flatten -> dense(120) -> ReLU -> dropout(0.5) -> dense(classes) -> softmax.
// Valid convolutions, stride 1, no pooling. Tensors are [y][x][channel];
// filters are [filter][dy][dx][channel].

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hsi/preprocess.hpp"
#include "hsi/random.hpp"
#include "hsi/types.hpp"

namespace hsi {

struct CnnSpec {
  std::size_t input_window = 5;
  std::size_t input_channels = 0;
  std::size_t conv1_filters = 0;
  std::size_t conv2_filters = 0;
  std::size_t kernel = 3;
  std::size_t dense_units = 120;
  double dropout = 0.5;
  std::size_t num_classes = 0;

  /// The reference architecture: C1 = channels, C2 = 3 * C1.
  static CnnSpec standard(std::size_t window, std::size_t channels, std::size_t num_classes);

  std::size_t conv1_size() const { return input_window - kernel + 1; }
  std::size_t conv2_size() const { return conv1_size() - kernel + 1; }
  std::size_t flat_size() const { return conv2_size() * conv2_size() * conv2_filters; }
  std::size_t input_size() const { return input_window * input_window * input_channels; }

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  friend bool operator==(const CnnSpec&, const CnnSpec&) = default;
};

template <typename T>
struct CnnParams {
  std::vector<T> conv1_w, conv1_b, conv2_w, conv2_b;
  std::vector<T> dense1_w, dense1_b, dense2_w, dense2_b;

  static constexpr std::array<const char*, 8> kNames = {
      "conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense1_w", "dense1_b", "dense2_w", "dense2_b"};

  std::array<std::vector<T>*, 8> tensors() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &dense1_w, &dense1_b, &dense2_w, &dense2_b};
  }
  std::array<const std::vector<T>*, 8> tensors() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &dense1_w, &dense1_b, &dense2_w, &dense2_b};
  }

  /// Zero-filled tensors shaped for `spec`.
  static CnnParams zeros(const CnnSpec& spec);
  std::size_t count() const;
};

template <typename T>
struct CnnModelT {
  CnnSpec spec;
  std::vector<ClassId> class_ids;  // output index -> class id, ascending
  CnnParams<T> params;
  std::uint64_t seed = 0;
};

using CnnModel = CnnModelT<float>;

enum class Activation { kIdentity, kRelu };

/// Square feature map, [y][x][channel].
template <typename T>
struct Tensor {
  std::size_t size = 0;
  std::size_t channels = 0;
  std::vector<T> data;

  T& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * size + x) * channels + c]; }
  T at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * size + x) * channels + c];
  }
};

/// Valid, stride-1 convolution of a size x size x channels input with
/// `filters` ([f][dy][dx][c]) of side `kernel`.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, std::span<const T> filters,
                       std::span<const T> biases, std::size_t kernel, Activation activation);

/// Activations recorded by a forward pass, consumed by backward().
template <typename T>
struct ForwardTrace {
  Tensor<T> input;
  Tensor<T> conv1_pre, conv1;
  Tensor<T> conv2_pre, conv2;
  std::vector<T> dense1_pre, dense1;  // dense1 is post ReLU and dropout
  std::vector<std::uint8_t> keep;     // dropout mask; empty when inactive
  std::vector<T> logits, probs;
};

/// He-uniform weights, zero biases.
template <typename T>
CnnModelT<T> init_cnn(const CnnSpec& spec, std::vector<ClassId> class_ids, std::uint64_t seed);

/// Draws a fresh dropout keep-mask for the dense layer.
std::vector<std::uint8_t> draw_dropout_mask(const CnnSpec& spec, Rng& rng);

/// Forward pass with an explicit dropout mask (empty = inference).
template <typename T>
ForwardTrace<T> forward_trace(const CnnModelT<T>& model, std::span<const T> patch,
                              std::span<const std::uint8_t> keep = {});

/// Class probabilities. In train mode a dropout mask is drawn from `rng` and
/// kept units are scaled by 1/(1-p); inference mode is deterministic.
template <typename T>
std::vector<T> forward(const CnnModelT<T>& model, std::span<const T> patch, bool train_mode, Rng& rng);

/// Cross-entropy loss -ln p[target] computed stably from logits.
template <typename T>
T cross_entropy(const ForwardTrace<T>& trace, std::size_t target);

/// Gradient of cross_entropy(trace, target) with respect to every parameter.
template <typename T>
CnnParams<T> backward(const CnnModelT<T>& model, const ForwardTrace<T>& trace, std::size_t target);

template <typename To, typename From>
CnnModelT<To> cast_model(const CnnModelT<From>& model) {
  CnnModelT<To> out{model.spec, model.class_ids, {}, model.seed};
  auto dst = out.params.tensors();
  auto src = model.params.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->assign(src[i]->begin(), src[i]->end());
  return out;
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::uint64_t seed = 42;

  void validate() const;
};

struct TrainResult {
  CnnModel model;
  std::vector<double> epoch_loss;  // mean train-mode batch loss per epoch
};

/// SGD with momentum over mini-batches; single-threaded and bitwise
/// reproducible for a fixed seed.
class CnnTrainer {
 public:
  CnnTrainer(const CnnSpec& spec, std::vector<ClassId> class_ids, const TrainConfig& config);

  /// One pass over `data`; returns its mean batch loss. Throws NumericError
  /// on a non-finite loss.
  double run_epoch(const PatchSet& data);

  const CnnModel& model() const { return model_; }

 private:
  CnnModel model_;
  TrainConfig config_;
  CnnParams<float> velocity_;
  Rng rng_;
  std::size_t epoch_ = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

TrainResult train_cnn(const CnnSpec& spec, const PatchSet& train, const TrainConfig& config,
                      const EpochCallback& on_epoch = {});

/// Output index of the highest probability; smallest index on ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

LabelMap classify_cnn(const CnnModel& model, const HyperCube& features, std::size_t window,
                      unsigned threads = 1);

void save_cnn(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_cnn(const std::filesystem::path& path);

}  // namespace hsi
