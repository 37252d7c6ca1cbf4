#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace tvae {

// A named trainable (or frozen) tensor with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string name_, std::vector<int> shape_, bool trainable_ = true)
      : name(std::move(name_)), shape(std::move(shape_)), trainable(trainable_) {
    const std::size_t n = count();
    value.assign(n, T(0));
    grad.assign(n, T(0));
  }

  std::size_t count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation. Values are rounded
// through float so a float32 checkpoint reproduces them exactly.
template <typename T, typename Rng>
void init_uniform_fan_in(Param<T>& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value) v = static_cast<T>(static_cast<float>(dist(rng)));
}

}  // namespace tvae
