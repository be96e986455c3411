#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tap/video_denoiser.hpp"

namespace tap {

// Blind AWGN pretraining of the image denoiser on clean frames: each sample
// gets its own sigma drawn uniformly from [sigma_min, sigma_max].
struct PretrainConfig {
  int64_t iterations = 2000;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  int64_t batch = 8;
  int64_t patch = 32;
  double sigma_min = 10.0 / 255.0;
  double sigma_max = 55.0 / 255.0;
  bool augment = true;  // random flips and transposes
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct PretrainOptions {
  std::optional<std::filesystem::path> curve_csv;     // iteration,loss,lr
  std::optional<std::filesystem::path> resume_state;  // read when present, rewritten every resume_every
  int64_t resume_every = 0;
  int64_t stop_after = -1;
  std::function<void(int64_t iteration, double loss)> on_log;
  int64_t log_every = 100;
};

struct PretrainResult {
  bool completed = false;
  int64_t iterations = 0;  // total iterations done, including resumed ones
  double last_loss = 0;
};

// corpus: videos or stacks of images, each N x C x H x W in [0, 1].
PretrainResult pretrain_image(ImageDenoiser& den, const std::vector<Tensor<float>>& corpus, const PretrainConfig& cfg,
                              const PretrainOptions& opts = {});

// One noisy/clean batch with per-sample sigma (exposed for tests).
struct PretrainBatch {
  Tensor<float> noisy, clean;
  std::vector<double> sigmas;
};
PretrainBatch sample_pretrain_batch(const std::vector<Tensor<float>>& corpus, const PretrainConfig& cfg, Rng& rng);

}  // namespace tap
