#include "hsi/cnn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "hsi/error.hpp"
#include "hsi/io.hpp"
#include "hsi/parallel.hpp"
#include "json.hpp"

namespace hsi {
namespace {

constexpr std::string_view kCnnMagic = "HSN1";
static_assert(std::endian::native == std::endian::little);

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Accumulates filter/bias gradients of a valid convolution given the
// gradient at its pre-activation, and optionally the gradient at its input.
template <typename T>
void conv_backward(const Tensor<T>& input, std::span<const T> filters, std::size_t kernel,
                   const Tensor<T>& dpre, std::vector<T>& dfilters, std::vector<T>& dbiases,
                   Tensor<T>* dinput) {
  const std::size_t c_in = input.channels;
  for (std::size_t y = 0; y < dpre.size; ++y) {
    for (std::size_t x = 0; x < dpre.size; ++x) {
      for (std::size_t f = 0; f < dpre.channels; ++f) {
        const T g = dpre.at(y, x, f);
        if (g == T(0)) continue;
        dbiases[f] += g;
        for (std::size_t dy = 0; dy < kernel; ++dy) {
          for (std::size_t dx = 0; dx < kernel; ++dx) {
            const std::size_t in_off = ((y + dy) * input.size + x + dx) * c_in;
            const std::size_t w_off = ((f * kernel + dy) * kernel + dx) * c_in;
            for (std::size_t l = 0; l < c_in; ++l) {
              dfilters[w_off + l] += g * input.data[in_off + l];
              if (dinput) dinput->data[in_off + l] += g * filters[w_off + l];
            }
          }
        }
      }
    }
  }
}

// NaN passes through so that corrupt inputs surface as a non-finite loss.
template <typename T>
T relu(T v) {
  return v < T(0) ? T(0) : v;
}

std::size_t class_index(const std::vector<ClassId>& class_ids, ClassId id) {
  auto it = std::lower_bound(class_ids.begin(), class_ids.end(), id);
  if (it == class_ids.end() || *it != id) {
    throw DataError("label " + std::to_string(id) + " is not a class of the model");
  }
  return static_cast<std::size_t>(it - class_ids.begin());
}

}  // namespace

CnnSpec CnnSpec::standard(std::size_t window, std::size_t channels, std::size_t num_classes) {
  CnnSpec s;
  s.input_window = window;
  s.input_channels = channels;
  s.conv1_filters = channels;
  s.conv2_filters = 3 * channels;
  s.num_classes = num_classes;
  return s;
}

void CnnSpec::validate() const {
  if (input_channels == 0 || conv1_filters == 0 || dense_units == 0) {
    throw ConfigError("CNN layer sizes must be positive");
  }
  if (conv2_filters != 3 * conv1_filters) {
    throw ConfigError("second convolution must have three times the filters of the first");
  }
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("CNN kernel must be odd");
  if (input_window % 2 == 0) throw ConfigError("CNN input window must be odd");
  if (input_window < 2 * (kernel - 1) + 1) {
    throw ConfigError("input window " + std::to_string(input_window) +
                      " too small for two valid convolutions of kernel " + std::to_string(kernel));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (num_classes < 1) throw ConfigError("CNN needs at least one class");
}

template <typename T>
CnnParams<T> CnnParams<T>::zeros(const CnnSpec& s) {
  CnnParams p;
  p.conv1_w.assign(s.conv1_filters * s.kernel * s.kernel * s.input_channels, T(0));
  p.conv1_b.assign(s.conv1_filters, T(0));
  p.conv2_w.assign(s.conv2_filters * s.kernel * s.kernel * s.conv1_filters, T(0));
  p.conv2_b.assign(s.conv2_filters, T(0));
  p.dense1_w.assign(s.dense_units * s.flat_size(), T(0));
  p.dense1_b.assign(s.dense_units, T(0));
  p.dense2_w.assign(s.num_classes * s.dense_units, T(0));
  p.dense2_b.assign(s.num_classes, T(0));
  return p;
}

template <typename T>
std::size_t CnnParams<T>::count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, std::span<const T> filters,
                       std::span<const T> biases, std::size_t kernel, Activation activation) {
  if (kernel == 0 || input.size < kernel) throw DataError("convolution kernel larger than input");
  if (input.data.size() != input.size * input.size * input.channels) {
    throw DataError("input tensor size does not match its shape");
  }
  const std::size_t nf = biases.size();
  if (filters.size() != nf * kernel * kernel * input.channels) {
    throw DataError("filter tensor does not match input channels and bias count");
  }
  Tensor<T> out{input.size - kernel + 1, nf, {}};
  out.data.resize(out.size * out.size * nf);
  const std::size_t c_in = input.channels;
  for (std::size_t y = 0; y < out.size; ++y) {
    for (std::size_t x = 0; x < out.size; ++x) {
      for (std::size_t f = 0; f < nf; ++f) {
        T s = biases[f];
        for (std::size_t dy = 0; dy < kernel; ++dy) {
          for (std::size_t dx = 0; dx < kernel; ++dx) {
            const T* in = input.data.data() + ((y + dy) * input.size + x + dx) * c_in;
            const T* w = filters.data() + ((f * kernel + dy) * kernel + dx) * c_in;
            for (std::size_t l = 0; l < c_in; ++l) s += in[l] * w[l];
          }
        }
        out.at(y, x, f) = activation == Activation::kRelu ? relu(s) : s;
      }
    }
  }
  return out;
}

template <typename T>
CnnModelT<T> init_cnn(const CnnSpec& spec, std::vector<ClassId> class_ids, std::uint64_t seed) {
  spec.validate();
  if (class_ids.size() != spec.num_classes) throw ConfigError("class id count does not match spec");
  if (!std::is_sorted(class_ids.begin(), class_ids.end()) ||
      std::adjacent_find(class_ids.begin(), class_ids.end()) != class_ids.end()) {
    throw ConfigError("class ids must be strictly ascending");
  }
  CnnModelT<T> m{spec, std::move(class_ids), CnnParams<T>::zeros(spec), seed};
  Rng rng(seed);
  auto he = [&rng](std::vector<T>& w, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
  };
  he(m.params.conv1_w, spec.kernel * spec.kernel * spec.input_channels);
  he(m.params.conv2_w, spec.kernel * spec.kernel * spec.conv1_filters);
  he(m.params.dense1_w, spec.flat_size());
  he(m.params.dense2_w, spec.dense_units);
  return m;
}

std::vector<std::uint8_t> draw_dropout_mask(const CnnSpec& spec, Rng& rng) {
  std::vector<std::uint8_t> keep(spec.dense_units);
  for (auto& k : keep) k = uniform01(rng) >= spec.dropout ? 1 : 0;
  return keep;
}

template <typename T>
ForwardTrace<T> forward_trace(const CnnModelT<T>& model, std::span<const T> patch,
                              std::span<const std::uint8_t> keep) {
  const CnnSpec& s = model.spec;
  const auto& p = model.params;
  if (patch.size() != s.input_size()) {
    throw DataError("patch has " + std::to_string(patch.size()) + " values, network expects " +
                    std::to_string(s.input_size()));
  }
  if (!keep.empty() && keep.size() != s.dense_units) throw DataError("dropout mask size mismatch");

  ForwardTrace<T> t;
  t.input = {s.input_window, s.input_channels, std::vector<T>(patch.begin(), patch.end())};
  t.conv1_pre = conv_forward<T>(t.input, p.conv1_w, p.conv1_b, s.kernel, Activation::kIdentity);
  t.conv1 = t.conv1_pre;
  for (auto& v : t.conv1.data) v = relu(v);
  t.conv2_pre = conv_forward<T>(t.conv1, p.conv2_w, p.conv2_b, s.kernel, Activation::kIdentity);
  t.conv2 = t.conv2_pre;
  for (auto& v : t.conv2.data) v = relu(v);

  const std::size_t flat = s.flat_size();
  const T scale = keep.empty() ? T(1) : static_cast<T>(1.0 / (1.0 - s.dropout));
  t.dense1_pre.resize(s.dense_units);
  t.dense1.resize(s.dense_units);
  for (std::size_t u = 0; u < s.dense_units; ++u) {
    T acc = p.dense1_b[u];
    const T* w = p.dense1_w.data() + u * flat;
    for (std::size_t i = 0; i < flat; ++i) acc += w[i] * t.conv2.data[i];
    t.dense1_pre[u] = acc;
    t.dense1[u] = keep.empty() ? relu(acc) : (keep[u] ? relu(acc) * scale : T(0));
  }
  if (!keep.empty()) t.keep.assign(keep.begin(), keep.end());

  t.logits.resize(s.num_classes);
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    T acc = p.dense2_b[c];
    const T* w = p.dense2_w.data() + c * s.dense_units;
    for (std::size_t u = 0; u < s.dense_units; ++u) acc += w[u] * t.dense1[u];
    t.logits[c] = acc;
  }
  const T mx = *std::max_element(t.logits.begin(), t.logits.end());
  t.probs.resize(s.num_classes);
  T sum = 0;
  for (std::size_t c = 0; c < s.num_classes; ++c) sum += t.probs[c] = std::exp(t.logits[c] - mx);
  for (auto& v : t.probs) v /= sum;
  return t;
}

template <typename T>
std::vector<T> forward(const CnnModelT<T>& model, std::span<const T> patch, bool train_mode, Rng& rng) {
  if (train_mode && model.spec.dropout > 0.0) {
    const auto keep = draw_dropout_mask(model.spec, rng);
    return forward_trace(model, patch, std::span<const std::uint8_t>(keep)).probs;
  }
  return forward_trace(model, patch).probs;
}

template <typename T>
T cross_entropy(const ForwardTrace<T>& trace, std::size_t target) {
  const T mx = *std::max_element(trace.logits.begin(), trace.logits.end());
  T sum = 0;
  for (T l : trace.logits) sum += std::exp(l - mx);
  return std::log(sum) + mx - trace.logits.at(target);
}

template <typename T>
void backward_accumulate(const CnnModelT<T>& model, const ForwardTrace<T>& t, std::size_t target,
                         CnnParams<T>& g) {
  const CnnSpec& s = model.spec;
  const auto& p = model.params;
  if (target >= s.num_classes) throw DataError("target class index out of range");

  // p_t - 1 is formed as minus the other probabilities: near p_t = 1 the
  // direct subtraction keeps only a few significant bits in float.
  std::vector<T> dlogits = t.probs;
  T rest = T(0);
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    if (c != target) rest += t.probs[c];
  }
  dlogits[target] = -rest;

  std::vector<T> ddense1(s.dense_units, T(0));
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    const T d = dlogits[c];
    g.dense2_b[c] += d;
    T* gw = g.dense2_w.data() + c * s.dense_units;
    const T* w = p.dense2_w.data() + c * s.dense_units;
    for (std::size_t u = 0; u < s.dense_units; ++u) {
      gw[u] += d * t.dense1[u];
      ddense1[u] += d * w[u];
    }
  }

  const T scale = t.keep.empty() ? T(1) : static_cast<T>(1.0 / (1.0 - s.dropout));
  const std::size_t flat = s.flat_size();
  Tensor<T> dconv2{t.conv2.size, t.conv2.channels, std::vector<T>(flat, T(0))};
  for (std::size_t u = 0; u < s.dense_units; ++u) {
    T d = ddense1[u];
    if (!t.keep.empty()) d = t.keep[u] ? d * scale : T(0);
    if (!(t.dense1_pre[u] > T(0))) d = T(0);
    if (d == T(0)) continue;
    g.dense1_b[u] += d;
    T* gw = g.dense1_w.data() + u * flat;
    const T* w = p.dense1_w.data() + u * flat;
    for (std::size_t i = 0; i < flat; ++i) {
      gw[i] += d * t.conv2.data[i];
      dconv2.data[i] += d * w[i];
    }
  }
  for (std::size_t i = 0; i < flat; ++i) {
    if (!(t.conv2_pre.data[i] > T(0))) dconv2.data[i] = T(0);
  }

  Tensor<T> dconv1{t.conv1.size, t.conv1.channels, std::vector<T>(t.conv1.data.size(), T(0))};
  conv_backward<T>(t.conv1, p.conv2_w, s.kernel, dconv2, g.conv2_w, g.conv2_b, &dconv1);
  for (std::size_t i = 0; i < dconv1.data.size(); ++i) {
    if (!(t.conv1_pre.data[i] > T(0))) dconv1.data[i] = T(0);
  }
  conv_backward<T>(t.input, p.conv1_w, s.kernel, dconv1, g.conv1_w, g.conv1_b, nullptr);
}

template <typename T>
CnnParams<T> backward(const CnnModelT<T>& model, const ForwardTrace<T>& trace, std::size_t target) {
  auto g = CnnParams<T>::zeros(model.spec);
  backward_accumulate(model, trace, target, g);
  return g;
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

CnnTrainer::CnnTrainer(const CnnSpec& spec, std::vector<ClassId> class_ids, const TrainConfig& config)
    : model_(init_cnn<float>(spec, std::move(class_ids), config.seed)),
      config_(config),
      velocity_(CnnParams<float>::zeros(spec)),
      rng_(config.seed ^ 0x9e3779b97f4a7c15ull) {
  config_.validate();
}

double CnnTrainer::run_epoch(const PatchSet& data) {
  const CnnSpec& s = model_.spec;
  if (data.size() == 0) throw DataError("empty training set");
  if (data.window != s.input_window || data.channels != s.input_channels) {
    throw DataError("training patches do not match the network input shape");
  }
  std::vector<std::size_t> targets(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) targets[i] = class_index(model_.class_ids, data.labels[i]);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(order), rng_);

  auto grads = CnnParams<float>::zeros(s);
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t end = std::min(order.size(), start + config_.batch_size);
    for (auto* t : grads.tensors()) std::fill(t->begin(), t->end(), 0.0f);
    float batch_loss = 0.0f;
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t idx = order[i];
      std::vector<std::uint8_t> keep;
      if (s.dropout > 0.0) keep = draw_dropout_mask(s, rng_);
      const auto trace = forward_trace<float>(model_, data.patch(idx), keep);
      batch_loss += cross_entropy(trace, targets[idx]);
      backward_accumulate(model_, trace, targets[idx], grads);
    }
    const float n = static_cast<float>(end - start);
    batch_loss /= n;
    if (!std::isfinite(batch_loss)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch_ + 1) +
                         ", batch " + std::to_string(batches + 1));
    }
    loss_sum += batch_loss;
    ++batches;

    const float lr = static_cast<float>(config_.learning_rate);
    const float mu = static_cast<float>(config_.momentum);
    auto params = model_.params.tensors();
    auto vel = velocity_.tensors();
    auto grad = grads.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& pv = *params[k];
      auto& vv = *vel[k];
      const auto& gv = *grad[k];
      for (std::size_t i = 0; i < pv.size(); ++i) {
        vv[i] = mu * vv[i] - lr * (gv[i] / n);
        pv[i] += vv[i];
      }
    }
  }
  ++epoch_;
  return loss_sum / static_cast<double>(batches);
}

TrainResult train_cnn(const CnnSpec& spec, const PatchSet& train, const TrainConfig& config,
                      const EpochCallback& on_epoch) {
  config.validate();
  std::set<ClassId> ids(train.labels.begin(), train.labels.end());
  if (ids.contains(0)) throw DataError("training patches contain label 0");
  CnnTrainer trainer(spec, std::vector<ClassId>(ids.begin(), ids.end()), config);
  TrainResult result;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    result.epoch_loss.push_back(trainer.run_epoch(train));
    if (on_epoch) on_epoch(e + 1, result.epoch_loss.back());
  }
  result.model = trainer.model();
  return result;
}

LabelMap classify_cnn(const CnnModel& model, const HyperCube& features, std::size_t window,
                      unsigned threads) {
  check_window(window);
  if (window != model.spec.input_window) {
    throw DataError("window " + std::to_string(window) + " does not match the network input " +
                    std::to_string(model.spec.input_window));
  }
  if (features.bands != model.spec.input_channels) {
    throw DataError("cube has " + std::to_string(features.bands) + " bands, network expects " +
                    std::to_string(model.spec.input_channels));
  }
  LabelMap out(features.height, features.width);
  parallel_for(features.pixels(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<float> patch(model.spec.input_size());
    for (std::size_t p = begin; p < end; ++p) {
      extract_patch(features, p, window, patch);
      const auto trace = forward_trace<float>(model, patch);
      out.labels[p] = model.class_ids[argmax<float>(trace.probs)];
    }
  });
  return out;
}

void save_cnn(const CnnModel& model, const std::filesystem::path& path) {
  const auto& s = model.spec;
  nlohmann::ordered_json j;
  j["kind"] = "cnn";
  j["version"] = 1;
  j["dtype"] = "f32";
  j["spec"] = {{"input_window", s.input_window}, {"input_channels", s.input_channels},
               {"conv1_filters", s.conv1_filters}, {"conv2_filters", s.conv2_filters},
               {"kernel", s.kernel},               {"dense_units", s.dense_units},
               {"dropout", s.dropout},             {"num_classes", s.num_classes}};
  j["class_ids"] = model.class_ids;
  j["seed"] = model.seed;
  std::vector<float> payload;
  for (const auto* t : model.params.tensors()) payload.insert(payload.end(), t->begin(), t->end());
  container::write(path, kCnnMagic, j.dump(), payload.data(), payload.size() * sizeof(float));
}

CnnModel load_cnn(const std::filesystem::path& path) {
  auto h = container::read(path);
  if (h.magic != kCnnMagic) throw DataError(path.string() + ": not a CNN checkpoint");
  CnnModel m;
  try {
    const auto j = nlohmann::json::parse(h.json);
    if (j.at("version") != 1) throw DataError(path.string() + ": incompatible CNN checkpoint version");
    const auto& js = j.at("spec");
    m.spec.input_window = js.at("input_window");
    m.spec.input_channels = js.at("input_channels");
    m.spec.conv1_filters = js.at("conv1_filters");
    m.spec.conv2_filters = js.at("conv2_filters");
    m.spec.kernel = js.at("kernel");
    m.spec.dense_units = js.at("dense_units");
    m.spec.dropout = js.at("dropout");
    m.spec.num_classes = js.at("num_classes");
    m.class_ids = j.at("class_ids").get<std::vector<ClassId>>();
    m.seed = j.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed CNN header: " + e.what());
  }
  m.spec.validate();
  if (m.class_ids.size() != m.spec.num_classes) throw DataError(path.string() + ": class id count mismatch");
  m.params = CnnParams<float>::zeros(m.spec);
  if (h.payload.size() != m.params.count() * sizeof(float)) {
    throw DataError(path.string() + ": parameter payload size does not match spec");
  }
  std::size_t offset = 0;
  for (auto* t : m.params.tensors()) {
    std::memcpy(t->data(), h.payload.data() + offset, t->size() * sizeof(float));
    offset += t->size() * sizeof(float);
  }
  return m;
}

#define HSI_INSTANTIATE_CNN(T)                                                                    \
  template struct CnnParams<T>;                                                                   \
  template Tensor<T> conv_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,    \
                                     std::size_t, Activation);                                    \
  template CnnModelT<T> init_cnn<T>(const CnnSpec&, std::vector<ClassId>, std::uint64_t);         \
  template ForwardTrace<T> forward_trace<T>(const CnnModelT<T>&, std::span<const T>,              \
                                            std::span<const std::uint8_t>);                       \
  template std::vector<T> forward<T>(const CnnModelT<T>&, std::span<const T>, bool, Rng&);        \
  template T cross_entropy<T>(const ForwardTrace<T>&, std::size_t);                               \
  template CnnParams<T> backward<T>(const CnnModelT<T>&, const ForwardTrace<T>&, std::size_t);    \
  template std::size_t argmax<T>(std::span<const T>);

HSI_INSTANTIATE_CNN(float)
HSI_INSTANTIATE_CNN(double)

#undef HSI_INSTANTIATE_CNN

}  // namespace hsi
