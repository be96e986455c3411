#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tap/autograd.hpp"
#include "tap/kernels.hpp"

namespace tap {

using Rng = std::mt19937_64;

// Named parameter registry. Registration order is the canonical order used by
// checkpoints and optimizers. Frozen parameters never require a gradient.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Var<T>& get(const std::string& name);
  const Var<T>& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return names_.size(); }

  bool frozen(const std::string& name) const;
  // Applies to every parameter whose name starts with `prefix` ("" matches all).
  void set_frozen(std::string_view prefix, bool frozen);
  std::vector<std::string> trainable_names() const;
  int64_t parameter_count(std::string_view prefix = "", bool trainable_only = false) const;

  void zero_grad();

  std::map<std::string, Tensor<T>> snapshot() const;
  void restore(const std::map<std::string, Tensor<T>>& values);

 private:
  struct Entry {
    Var<T> var;
    bool frozen = false;
  };
  std::vector<std::string> names_;
  std::map<std::string, Entry> index_;
};

template <typename T>
Tensor<T> uniform_tensor(Shape shape, T bound, Rng& rng);

template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;  // may be undefined
  kernels::ConvGeom geom;

  // PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
  static Conv2d create(ParamStore<T>& store, const std::string& name, int64_t cin, int64_t cout, int64_t k,
                       Rng& rng, int64_t stride = 1, int64_t groups = 1, bool bias = true);
  // Same registration with all-zero weight and bias.
  static Conv2d create_zero(ParamStore<T>& store, const std::string& name, int64_t cin, int64_t cout, int64_t k,
                            int64_t stride = 1);

  Var<T> operator()(const Var<T>& x) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed set of parameter names. State is keyed by name so it can
// be checkpointed alongside the parameters.
template <typename T>
class Adam {
 public:
  Adam(std::vector<std::string> names, AdamConfig cfg = {}) : names_(std::move(names)), cfg_(cfg) {}

  // Applies one update with the given learning rate; parameters that did not
  // receive a gradient this step are skipped.
  void step(ParamStore<T>& store, double lr);

  int64_t steps_taken() const { return t_; }
  const std::vector<std::string>& names() const { return names_; }

  // Moments for checkpointing: "m.<name>" and "v.<name>".
  std::map<std::string, Tensor<T>> state() const;
  void load_state(const std::map<std::string, Tensor<T>>& state, int64_t steps_taken);

 private:
  std::vector<std::string> names_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

// Cosine annealing from lr_start at iteration 0 to lr_end at iteration total-1.
double cosine_lr(int64_t iteration, int64_t total, double lr_start, double lr_end);

}  // namespace tap
