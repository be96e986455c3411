#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tap/nn.hpp"

namespace tap {

// Plain number or fraction such as "30/255"; `what` names the value in errors.
double parse_scalar(const std::string& s, const std::string& what);

struct Awgn {
  double sigma = 0.0;  // std-dev in [0, 1] intensity units
};

struct PoissonGaussian {
  double alpha = 0.0;  // gain
  double delta = 0.0;  // read-noise std-dev
};

struct NoiseModel {
  std::variant<Awgn, PoissonGaussian> params;
  uint64_t seed = 0;

  static NoiseModel awgn(double sigma, uint64_t seed = 0);
  static NoiseModel poisson_gaussian(double alpha, double delta, uint64_t seed = 0);

  bool is_awgn() const { return std::holds_alternative<Awgn>(params); }
  void validate() const;

  // "awgn:sigma=<v>" or "pg:alpha=<a>,delta=<d>"; doubles are printed round-trip exact.
  std::string descriptor() const;
  static NoiseModel parse(const std::string& descriptor, uint64_t seed = 0);

  nlohmann::json to_json() const;
  static NoiseModel from_json(const nlohmann::json& j);
};

template <typename T>
Tensor<T> sample_awgn(const Shape& shape, double sigma, Rng& rng);

// alpha * Poisson(x / alpha) - x + N(0, delta^2) per pixel; alpha == 0 gives N(0, delta^2).
template <typename T>
Tensor<T> sample_poisson_gaussian(const Tensor<T>& clean, double alpha, double delta, Rng& rng);

// Noise drawn from `model` for the given clean signal (ignored by AWGN except for its shape).
template <typename T>
Tensor<T> sample_noise(const Tensor<T>& clean, const NoiseModel& model, Rng& rng);

// ISO -> (alpha, delta) in normalized intensity units. Text format, one entry per
// line: "<iso> <alpha> <delta>"; '#' starts a comment.
class CalibrationTable {
 public:
  static CalibrationTable parse(const std::string& text);
  static CalibrationTable load(const std::filesystem::path& path);

  void set(int iso, double alpha, double delta) { entries_[iso] = {alpha, delta}; }
  PoissonGaussian lookup(int iso) const;
  NoiseModel model_for(int iso, uint64_t seed = 0) const;
  const std::map<int, PoissonGaussian>& entries() const { return entries_; }

 private:
  std::map<int, PoissonGaussian> entries_;
};

// Pseudo noisy-clean videos for one fine-tuning step.
struct PseudoPairSet {
  std::vector<std::string> video_ids;
  std::vector<Tensor<float>> clean;  // N x C x H x W, clamped to [0, 1]
  std::vector<Tensor<float>> noisy;  // clean + noise, not clamped
  int source_step = 1;
  NoiseModel model;
  nlohmann::json provenance = nlohmann::json::object();

  size_t size() const { return clean.size(); }
  void validate() const;
};

using VideoFn = std::function<Tensor<float>(const Tensor<float>&)>;

// Independent stream per (seed, step, video index, draw).
Rng noise_stream(uint64_t seed, int source_step, size_t video_index, uint64_t draw = 0);

// clean = clamp(denoiser(video)); noisy = clean + sample(model).
PseudoPairSet make_pseudo_pairs(const std::vector<std::string>& video_ids, const std::vector<Tensor<float>>& videos,
                                const VideoFn& denoiser, const NoiseModel& model, int source_step);

// Draws a fresh noisy realization from the stored clean videos.
void recorrupt(PseudoPairSet& pairs, uint64_t draw);

// Layout: <dir>/manifest.json plus <dir>/{clean,noisy}/<video_id>/<%05d>.tns
// (float32 tensor files, since recorrupted frames are unclamped).
void save_pseudo_pairs(const std::filesystem::path& dir, const PseudoPairSet& pairs);
PseudoPairSet load_pseudo_pairs(const std::filesystem::path& dir);

}  // namespace tap
