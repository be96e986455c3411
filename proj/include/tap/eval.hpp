#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tap/tensor.hpp"

namespace tap {

inline constexpr double kPsnrCap = 100.0;

// 10 log10(peak^2 / MSE), capped at kPsnrCap when the inputs are identical.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

// Gaussian-window SSIM (11 taps, sigma 1.5, K1 0.01, K2 0.03) over valid
// positions. Accepts C x H x W or 1 x C x H x W; colour images are scored per
// channel and the channel values averaged.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

// Mean over t of mean |frame[t+1] - frame[t]| for an N x C x H x W video, N >= 2.
template <typename T>
double temporal_coherence(const Tensor<T>& video);

struct FrameMetric {
  std::string video;
  int64_t frame = 0;
  double psnr = 0;
  double ssim = 0;
};

// Metrics of one denoiser state (e.g. one fine-tuning step) over a set of videos.
struct MetricReport {
  int step = 0;
  std::vector<FrameMetric> frames;
  std::optional<double> temporal_coherence;
  nlohmann::json config = nlohmann::json::object();
  double wall_clock_s = 0;

  double mean_psnr() const;
  double mean_ssim() const;
  // Per-video means in first-seen order.
  std::vector<FrameMetric> per_video() const;
};

// Appends per-frame metrics of a denoised video against its clean reference.
void evaluate_video(MetricReport& report, const std::string& video_id, const Tensor<float>& denoised,
                    const Tensor<float>& clean);

// Writes <csv_path> with columns step,video,frame,psnr,ssim (one summary row
// per report with video "ALL" and frame "mean"), a JSON sidecar <csv_path>.json
// and, when curve_path is set, a step,mean_psnr,mean_ssim curve.
void emit_report(const std::vector<MetricReport>& reports, const std::filesystem::path& csv_path,
                 const std::optional<std::filesystem::path>& curve_path = std::nullopt);

}  // namespace tap
