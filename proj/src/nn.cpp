#include "tap/nn.hpp"

#include <cmath>
#include <numbers>

#include "tap/errors.hpp"
#include "tap/ops.hpp"

namespace tap {

template <typename T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Var<T> v(std::move(init), true);
  names_.push_back(name);
  index_.emplace(name, Entry{v, false});
  return v;
}

template <typename T>
Var<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second.var;
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second.var;
}

template <typename T>
bool ParamStore<T>::frozen(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second.frozen;
}

template <typename T>
void ParamStore<T>::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& [name, e] : index_)
    if (name.compare(0, prefix.size(), prefix) == 0) {
      e.frozen = frozen;
      e.var.set_requires_grad(!frozen);
    }
}

template <typename T>
std::vector<std::string> ParamStore<T>::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& n : names_)
    if (!index_.at(n).frozen) out.push_back(n);
  return out;
}

template <typename T>
int64_t ParamStore<T>::parameter_count(std::string_view prefix, bool trainable_only) const {
  int64_t total = 0;
  for (const auto& [name, e] : index_) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    if (trainable_only && e.frozen) continue;
    total += e.var.value().numel();
  }
  return total;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, e] : index_) e.var.zero_grad();
}

template <typename T>
std::map<std::string, Tensor<T>> ParamStore<T>::snapshot() const {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, e] : index_) out.emplace(name, e.var.value());
  return out;
}

template <typename T>
void ParamStore<T>::restore(const std::map<std::string, Tensor<T>>& values) {
  for (const auto& [name, t] : values) {
    auto& v = get(name);
    if (v.shape() != t.shape())
      throw ConfigError("restore: shape mismatch for " + name + ": " + shape_str(v.shape()) + " vs " +
                        shape_str(t.shape()));
    v.mutable_value() = t;
  }
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, T bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (auto& v : t.span()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Conv2d<T> Conv2d<T>::create(ParamStore<T>& store, const std::string& name, int64_t cin, int64_t cout, int64_t k,
                            Rng& rng, int64_t stride, int64_t groups, bool bias) {
  Conv2d c;
  const int64_t fan_in = (cin / groups) * k * k;
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  c.weight = store.add(name + ".weight", uniform_tensor<T>({cout, cin / groups, k, k}, bound, rng));
  if (bias) c.bias = store.add(name + ".bias", uniform_tensor<T>({cout}, bound, rng));
  c.geom = {stride, stride == 1 ? k / 2 : 0, groups};
  return c;
}

template <typename T>
Conv2d<T> Conv2d<T>::create_zero(ParamStore<T>& store, const std::string& name, int64_t cin, int64_t cout,
                                 int64_t k, int64_t stride) {
  Conv2d c;
  c.weight = store.add(name + ".weight", Tensor<T>({cout, cin, k, k}));
  c.bias = store.add(name + ".bias", Tensor<T>({cout}));
  c.geom = {stride, stride == 1 ? k / 2 : 0, 1};
  return c;
}

template <typename T>
Var<T> Conv2d<T>::operator()(const Var<T>& x) const {
  return ops::conv2d(x, weight, bias, geom);
}

template <typename T>
void Adam<T>::step(ParamStore<T>& store, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg_.eps);
  for (const auto& name : names_) {
    auto& var = store.get(name);
    const auto& g = var.grad();
    if (g.empty()) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m = Tensor<T>(var.shape());
      v = Tensor<T>(var.shape());
    }
    T* p = var.mutable_value().data();
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) {
      const T gi = g[i];
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

template <typename T>
std::map<std::string, Tensor<T>> Adam<T>::state() const {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [k, t] : m_) out.emplace("m." + k, t);
  for (const auto& [k, t] : v_) out.emplace("v." + k, t);
  return out;
}

template <typename T>
void Adam<T>::load_state(const std::map<std::string, Tensor<T>>& state, int64_t steps_taken) {
  m_.clear();
  v_.clear();
  for (const auto& [k, t] : state) {
    if (k.rfind("m.", 0) == 0)
      m_[k.substr(2)] = t;
    else if (k.rfind("v.", 0) == 0)
      v_[k.substr(2)] = t;
    else
      throw ConfigError("unrecognized optimizer state entry: " + k);
  }
  t_ = steps_taken;
}

double cosine_lr(int64_t iteration, int64_t total, double lr_start, double lr_end) {
  if (total <= 1) return lr_start;
  if (iteration >= total - 1) return lr_end;
  const double progress = static_cast<double>(iteration) / static_cast<double>(total - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template class Adam<float>;
template class Adam<double>;
template Tensor<float> uniform_tensor(Shape, float, Rng&);
template Tensor<double> uniform_tensor(Shape, double, Rng&);

}  // namespace tap
