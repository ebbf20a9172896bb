#pragma once

#include <numeric>
#include <vector>

#include "hsi/cnn.hpp"
#include "support/synthetic.hpp"

namespace cnnutil {

using namespace hsi;

template <typename T>
CnnModelT<T> perturbed_model(const CnnSpec& spec, std::uint64_t seed) {
  std::vector<ClassId> ids(spec.num_classes);
  std::iota(ids.begin(), ids.end(), ClassId{1});
  auto m = init_cnn<T>(spec, ids, seed);
  // nonzero biases keep pre-activations away from exact zeros
  Rng rng(seed + 1);
  for (auto* t : m.params.tensors())
    for (auto& v : *t) v += static_cast<T>(0.05 * synth::normal(rng));
  return m;
}

template <typename T>
std::vector<T> random_patch(const CnnSpec& spec, Rng& rng) {
  std::vector<T> p(spec.input_size());
  for (auto& v : p) v = static_cast<T>(synth::normal(rng));
  return p;
}

inline double train_accuracy(const CnnModel& m, const PatchSet& set) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto t = forward_trace<float>(m, set.patch(i));
    ok += m.class_ids[argmax<float>(t.probs)] == set.labels[i];
  }
  return static_cast<double>(ok) / static_cast<double>(set.size());
}

}  // namespace cnnutil
