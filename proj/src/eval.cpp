#include "tap/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "tap/errors.hpp"

namespace tap {
namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

std::array<double, kWin> gauss_taps() {
  std::array<double, kWin> w{};
  double s = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    w[static_cast<size_t>(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
    s += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Separable valid-mode filter of an H x W plane.
std::vector<double> filter_valid(const std::vector<double>& img, int64_t H, int64_t W,
                                 const std::array<double, kWin>& w) {
  const int64_t Ho = H - kWin + 1, Wo = W - kWin + 1;
  std::vector<double> rows(static_cast<size_t>(H * Wo));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < Wo; ++x) {
      double s = 0;
      for (int k = 0; k < kWin; ++k) s += w[static_cast<size_t>(k)] * img[static_cast<size_t>(y * W + x + k)];
      rows[static_cast<size_t>(y * Wo + x)] = s;
    }
  std::vector<double> out(static_cast<size_t>(Ho * Wo));
  for (int64_t y = 0; y < Ho; ++y)
    for (int64_t x = 0; x < Wo; ++x) {
      double s = 0;
      for (int k = 0; k < kWin; ++k) s += w[static_cast<size_t>(k)] * rows[static_cast<size_t>((y + k) * Wo + x)];
      out[static_cast<size_t>(y * Wo + x)] = s;
    }
  return out;
}

template <typename T>
Shape image_shape(const Tensor<T>& t) {
  if (t.ndim() == 3) return t.shape();
  if (t.ndim() == 4 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.dim(3)};
  throw ConfigError("expected C x H x W or 1 x C x H x W image, got " + shape_str(t.shape()));
}

std::string fmt(double v) {
  char b[48];
  std::snprintf(b, sizeof(b), "%.6f", v);
  return b;
}

}  // namespace

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  if (a.shape() != b.shape())
    throw ConfigError("psnr: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.numel() == 0) throw ConfigError("psnr: empty input");
  double se = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  if (a.shape() != b.shape())
    throw ConfigError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Shape s = image_shape(a);
  const int64_t C = s[0], H = s[1], W = s[2];
  if (H < kWin || W < kWin)
    throw ConfigError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) + " is smaller than the " +
                      std::to_string(kWin) + "x" + std::to_string(kWin) + " window");
  const auto w = gauss_taps();
  const double c1 = std::pow(0.01 * peak, 2), c2 = std::pow(0.03 * peak, 2);
  const size_t n = static_cast<size_t>(H * W);
  double total = 0;
  for (int64_t c = 0; c < C; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(a[static_cast<int64_t>(c * H * W) + static_cast<int64_t>(i)]);
      y[i] = static_cast<double>(b[static_cast<int64_t>(c * H * W) + static_cast<int64_t>(i)]);
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, H, W, w), my = filter_valid(y, H, W, w);
    const auto sxx = filter_valid(xx, H, W, w), syy = filter_valid(yy, H, W, w), sxy = filter_valid(xy, H, W, w);
    double acc = 0;
    for (size_t i = 0; i < mx.size(); ++i) {
      // Every term is written symmetrically so ssim(a, b) == ssim(b, a) bit for bit.
      const double mxy = mx[i] * my[i], mxx = mx[i] * mx[i], myy = my[i] * my[i];
      const double vsum = (sxx[i] - mxx) + (syy[i] - myy), cxy = sxy[i] - mxy;
      acc += ((2 * mxy + c1) * (2 * cxy + c2)) / ((mxx + myy + c1) * (vsum + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(C);
}

template <typename T>
double temporal_coherence(const Tensor<T>& video) {
  if (video.ndim() != 4) throw ConfigError("temporal_coherence expects N x C x H x W");
  const int64_t N = video.dim(0);
  if (N < 2) throw ConfigError("temporal_coherence needs at least 2 frames, got " + std::to_string(N));
  const int64_t per = video.numel() / N;
  double sum = 0;
  for (int64_t t = 0; t + 1 < N; ++t) {
    double s = 0;
    for (int64_t i = 0; i < per; ++i)
      s += std::abs(static_cast<double>(video[(t + 1) * per + i]) - static_cast<double>(video[t * per + i]));
    sum += s / static_cast<double>(per);
  }
  return sum / static_cast<double>(N - 1);
}

template double psnr(const Tensor<float>&, const Tensor<float>&, double);
template double psnr(const Tensor<double>&, const Tensor<double>&, double);
template double ssim(const Tensor<float>&, const Tensor<float>&, double);
template double ssim(const Tensor<double>&, const Tensor<double>&, double);
template double temporal_coherence(const Tensor<float>&);
template double temporal_coherence(const Tensor<double>&);

double MetricReport::mean_psnr() const {
  if (frames.empty()) return 0;
  double s = 0;
  for (const auto& f : frames) s += f.psnr;
  return s / static_cast<double>(frames.size());
}

double MetricReport::mean_ssim() const {
  if (frames.empty()) return 0;
  double s = 0;
  for (const auto& f : frames) s += f.ssim;
  return s / static_cast<double>(frames.size());
}

std::vector<FrameMetric> MetricReport::per_video() const {
  std::vector<FrameMetric> out;
  std::map<std::string, size_t> where;
  std::vector<int64_t> counts;
  for (const auto& f : frames) {
    auto [it, added] = where.emplace(f.video, out.size());
    if (added) {
      out.push_back({f.video, 0, 0, 0});
      counts.push_back(0);
    }
    out[it->second].psnr += f.psnr;
    out[it->second].ssim += f.ssim;
    ++counts[it->second];
  }
  for (size_t i = 0; i < out.size(); ++i) {
    out[i].frame = counts[i];
    out[i].psnr /= static_cast<double>(counts[i]);
    out[i].ssim /= static_cast<double>(counts[i]);
  }
  return out;
}

void evaluate_video(MetricReport& report, const std::string& video_id, const Tensor<float>& denoised,
                    const Tensor<float>& clean) {
  if (denoised.shape() != clean.shape())
    throw DataError("video '" + video_id + "': output " + shape_str(denoised.shape()) + " vs reference " +
                    shape_str(clean.shape()));
  for (int64_t t = 0; t < clean.dim(0); ++t) {
    const auto a = batch_slice(denoised, t), b = batch_slice(clean, t);
    report.frames.push_back({video_id, t, psnr(a, b), ssim(a, b)});
  }
}

void emit_report(const std::vector<MetricReport>& reports, const std::filesystem::path& csv_path,
                 const std::optional<std::filesystem::path>& curve_path) {
  if (reports.empty()) throw ConfigError("emit_report: no reports");
  auto open = [](const std::filesystem::path& p) {
    if (p.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream os(p, std::ios::binary);
    if (!os) throw DataError("cannot write report: " + p.string());
    return os;
  };
  {
    auto os = open(csv_path);
    os << "step,video,frame,psnr,ssim\n";
    for (const auto& r : reports) {
      for (const auto& f : r.frames)
        os << r.step << "," << f.video << "," << f.frame << "," << fmt(f.psnr) << "," << fmt(f.ssim) << "\n";
      os << r.step << ",ALL,mean," << fmt(r.mean_psnr()) << "," << fmt(r.mean_ssim()) << "\n";
    }
    if (!os) throw DataError("failed writing " + csv_path.string());
  }
  {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) {
      nlohmann::json e = {{"step", r.step},
                          {"mean_psnr", r.mean_psnr()},
                          {"mean_ssim", r.mean_ssim()},
                          {"config", r.config},
                          {"wall_clock_s", r.wall_clock_s}};
      e["temporal_coherence"] = r.temporal_coherence ? nlohmann::json(*r.temporal_coherence) : nlohmann::json();
      nlohmann::json vids = nlohmann::json::array();
      for (const auto& v : r.per_video())
        vids.push_back({{"video", v.video}, {"frames", v.frame}, {"psnr", v.psnr}, {"ssim", v.ssim}});
      e["videos"] = vids;
      j.push_back(e);
    }
    auto os = open(csv_path.string() + ".json");
    os << j.dump(2) << "\n";
  }
  if (curve_path) {
    auto os = open(*curve_path);
    os << "step,mean_psnr,mean_ssim\n";
    for (const auto& r : reports) os << r.step << "," << fmt(r.mean_psnr()) << "," << fmt(r.mean_ssim()) << "\n";
  }
}

}  // namespace tap
