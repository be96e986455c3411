// Acceptance gate: one PASS/FAIL line per criterion. Usage: acceptance [criterion ...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tap/data.hpp"
#include "tap/eval.hpp"
#include "tap/finetune.hpp"
#include "tap/kernels.hpp"
#include "tap/noise.hpp"
#include "tap/pretrain.hpp"
#include "tap/video_denoiser.hpp"

#ifndef TAP_CLI_PATH
#error "TAP_CLI_PATH must point at the tap executable"
#endif

using namespace tap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "tap_acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

template <typename T>
Tensor<T> rand_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(s));
  for (auto& v : t.span()) v = static_cast<T>(u(rng));
  return t;
}

// 1. Closed gates make the video denoiser the image denoiser, bit for bit.
Outcome plugin_identity() {
  Rng rng(101);
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  int ok = 0;
  for (int i = 0; i < 20; ++i) {
    auto bc = DenoiserConfig::desk(pick(rng) % 2 ? 3 : 4);
    const int64_t c0 = std::array<int64_t, 3>{4, 8, 12}[static_cast<size_t>(pick(rng) % 3)];
    bc.channels = {c0, 2 * c0, 4 * c0, 8 * c0};
    for (auto& b : bc.enc_blocks) b = 1 + pick(rng) % 2;
    for (auto& b : bc.dec_blocks) b = 1 + pick(rng) % 2;
    bc.block = pick(rng) % 2 ? BlockType::kNaf : BlockType::kPlain;
    const int64_t T = 1 + 2 * (pick(rng) % 4);
    VideoDenoiser vd(VideoDenoiserConfig::for_backbone(bc, T), static_cast<uint64_t>(pick(rng)));
    // Run the modules even though their gates are closed.
    vd.set_skip_inactive_modules(false);
    const int64_t H = 9 + pick(rng) % 24, W = 9 + pick(rng) % 24;
    const auto window = rand_tensor<float>({T, bc.in_channels, H, W}, rng, 0, 1);
    const auto a = vd.denoise_window(window);
    const auto b = vd.denoise_image(batch_slice(window, T / 2));
    if (vd.all_gates_zero() && bitwise_equal(a, b)) ++ok;
  }
  return {ok == 20, fmt("%.0f/20 random desk configs bitwise equal", ok)};
}

// 2. Zero offsets reduce deformable convolution to ordinary convolution.
template <typename T>
double dcn_degeneracy_worst(uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const int64_t G = 1 + pick(rng) % 3, C = G * (1 + pick(rng) % 3), Co = 1 + pick(rng) % 5;
    const int64_t K = pick(rng) % 2 ? 3 : 1, H = 3 + pick(rng) % 8, W = 3 + pick(rng) % 8, N = 1 + pick(rng) % 2;
    const auto x = rand_tensor<T>({N, C, H, W}, rng);
    const auto w = rand_tensor<T>({Co, C, K, K}, rng);
    const auto b = rand_tensor<T>({Co}, rng);
    const Tensor<T> off({N, 2 * G * K * K, H, W});
    const auto d = kernels::deform_conv_forward(x, off, w, b, kernels::DeformGeom{K, K / 2, G});
    const auto c = kernels::conv2d_forward(x, w, b, kernels::ConvGeom{1, K / 2, 1});
    worst = std::max(worst, static_cast<double>(max_abs_diff(d, c)));
  }
  return worst;
}

Outcome dcn_degeneracy() {
  const double ws = dcn_degeneracy_worst<float>(201), wd = dcn_degeneracy_worst<double>(202);
  return {ws <= 1e-5 && wd <= 1e-10, fmt("max diff %.3g (float), %.3g (double) over 100 instances each", ws, wd)};
}

// 3. Analytic deformable-conv gradients against central differences.
double fd_worst(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& f) {
  const double h = 1e-5;
  double worst = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    const double num = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(num - analytic[i]) / std::max({std::abs(num), std::abs(analytic[i]), 1e-3}));
  }
  return worst;
}

Outcome dcn_gradients() {
  Rng rng(301);
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  double wx = 0, wo = 0, ww = 0;
  for (int i = 0; i < 10; ++i) {
    const int64_t G = 1 + pick(rng) % 2, C = G * (1 + pick(rng) % 2), Co = 1 + pick(rng) % 3;
    const int64_t H = 3 + pick(rng) % 6, W = 3 + pick(rng) % 6;
    auto x = rand_tensor<double>({1, C, H, W}, rng);
    auto off = rand_tensor<double>({1, 2 * G * 9, H, W}, rng, -2, 2);
    // Bilinear weights have kinks on integer grid lines; keep samples away from them.
    for (auto& v : off.span()) {
      const double frac = v - std::floor(v);
      if (frac < 0.05 || frac > 0.95) v += 0.3;
    }
    auto w = rand_tensor<double>({Co, C, 3, 3}, rng);
    const auto b = rand_tensor<double>({Co}, rng);
    const auto probe = rand_tensor<double>({1, Co, H, W}, rng);
    const kernels::DeformGeom geom{3, 1, G};
    const auto g = kernels::deform_conv_backward(x, off, w, true, probe, geom);
    auto f = [&] {
      const auto y = kernels::deform_conv_forward(x, off, w, b, geom);
      double s = 0;
      for (int64_t k = 0; k < y.numel(); ++k) s += y[k] * probe[k];
      return s;
    };
    wx = std::max(wx, fd_worst(x, g.input, f));
    wo = std::max(wo, fd_worst(off, g.offset, f));
    ww = std::max(ww, fd_worst(w, g.weight, f));
  }
  const bool ok = wx <= 1e-3 && wo <= 1e-3 && ww <= 1e-3;
  return {ok, fmt("worst rel err features %.2g, offsets %.2g, weights %.2g", wx, wo, ww)};
}

// 4. Progressive step m leaves everything outside tm{4-m} bitwise unchanged.
Outcome freeze_integrity() {
  VideoDenoiser vd(VideoDenoiserConfig::for_backbone(DenoiserConfig::desk(), 3), 401);
  Rng rng(402);
  std::vector<Tensor<float>> vids;
  for (int i = 0; i < 2; ++i) vids.push_back(rand_tensor<float>({4, 3, 16, 16}, rng, 0, 1));
  const std::vector<std::string> ids{"a", "b"};
  std::string detail;
  bool ok = true;
  for (int m = 1; m <= 3; ++m) {
    const int level = 4 - m;
    const auto pairs = make_pseudo_pairs(ids, vids, [](const Tensor<float>& t) { return t; },
                                         NoiseModel::awgn(0.1, 403), m);
    StepSpec spec;
    spec.target_level = level;
    spec.iterations = 100;
    spec.lr_start = 1e-3;
    spec.lr_end = 1e-4;
    spec.batch = 2;
    spec.patch = 16;
    const auto before = vd.params().snapshot();
    finetune_step(vd, pairs, spec);
    const std::string prefix = "tm" + std::to_string(level) + ".";
    int changed_outside = 0, moved_inside = 0;
    for (const auto& [n, t] : before) {
      const bool same = bitwise_equal(t, vd.params().get(n).value());
      if (n.rfind(prefix, 0) == 0)
        moved_inside += !same;
      else
        changed_outside += !same;
    }
    ok = ok && changed_outside == 0 && moved_inside > 0;
    detail += "m=" + std::to_string(m) + ": " + std::to_string(changed_outside) + " changed outside, " +
              std::to_string(moved_inside) + " updated in " + prefix + " ";
  }
  return {ok, detail + "(100 updates each)"};
}

// 5. Noise samplers against their closed forms.
Outcome noise_oracles() {
  Rng rng(501);
  const double sigma = 30.0 / 255.0;
  const auto n = sample_awgn<double>({1000000}, sigma, rng);
  double s = 0, s2 = 0;
  for (auto v : n.span()) s += v, s2 += v * v;
  const double sd = std::sqrt(s2 / 1e6 - (s / 1e6) * (s / 1e6));
  const double awgn_err = std::abs(sd / sigma - 1);

  const double alpha = 0.01, delta = 0.05;
  std::vector<double> xs, vs;
  for (int k = 1; k <= 9; ++k) {
    const double x = 0.1 * k;
    const auto y = sample_poisson_gaussian(Tensor<double>({1000000}, x), alpha, delta, rng);
    double m = 0, q = 0;
    for (auto v : y.span()) m += v, q += v * v;
    m /= 1e6;
    xs.push_back(x);
    vs.push_back(q / 1e6 - m * m);
  }
  double mx = 0, mv = 0, sxy = 0, sxx = 0;
  for (size_t i = 0; i < 9; ++i) mx += xs[i] / 9, mv += vs[i] / 9;
  for (size_t i = 0; i < 9; ++i) sxy += (xs[i] - mx) * (vs[i] - mv), sxx += (xs[i] - mx) * (xs[i] - mx);
  const double slope = sxy / sxx, icpt = mv - slope * mx;
  const double a_err = std::abs(slope / alpha - 1), d_err = std::abs(icpt / (delta * delta) - 1);
  return {awgn_err < 0.01 && a_err < 0.03 && d_err < 0.05,
          fmt("AWGN std err %.3f%%, alpha err %.2f%%, delta^2 err %.2f%%", 100 * awgn_err, 100 * a_err, 100 * d_err)};
}

// 6. Temporal-coherence metric on constant and static-noise videos.
Outcome temporal_metric() {
  const double tc0 = temporal_coherence(Tensor<double>({12, 3, 64, 64}, 0.37));
  const double sigma = 30.0 / 255.0;
  Rng rng(601);
  Tensor<double> vid({12, 3, 192, 192}, 0.5);
  vid += sample_awgn<double>(vid.shape(), sigma, rng);
  const double want = 2 * sigma / std::sqrt(std::numbers::pi);
  const double got = temporal_coherence(vid);
  const double err = std::abs(got / want - 1);
  const double pixels = static_cast<double>(vid.numel() / 12 * 11);
  return {tc0 == 0.0 && err < 0.02 && pixels >= 1e6,
          fmt("constant %.3g; AWGN %.5f vs 2s/sqrt(pi) %.5f (%.2f%%)", tc0, got, want, 100 * err)};
}

// 7 and 8 share a pretrained desk backbone and toy clips.
struct TrendSetup {
  static constexpr double kSigma = 30.0 / 255.0;
  static constexpr int64_t kPretrainIters = 3000;
  static constexpr int64_t kFinetuneIters = 1500;
  static constexpr double kFinetuneLr = 2e-3;
  static constexpr int64_t kFrames = 5;
  static constexpr int kTrainClips = 32;

  CheckpointFile step0;
  std::vector<ToyClip> train, val;
  std::vector<double> progressive;  // validation PSNR after steps 0..3
  std::vector<std::array<double, 3>> betas;

  static std::vector<ToyClip> clips(int n, uint64_t seed) {
    Rng r(seed);
    const double dirs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    std::vector<ToyClip> out;
    for (int i = 0; i < n; ++i) {
      ToyOptions o;
      o.size = 64;
      o.frames = 12;
      o.shift_x = dirs[i % 4][0];
      o.shift_y = dirs[i % 4][1];
      out.push_back(make_toy_dataset(ToyKind::kTranslating, o, kSigma, r));
    }
    return out;
  }

  double val_psnr(const VideoDenoiser& vd) const {
    double s = 0;
    int n = 0;
    for (const auto& c : val) {
      const auto out = vd.denoise_video(c.noisy.frames);
      for (int64_t t = 0; t < out.dim(0); ++t, ++n) s += psnr(batch_slice(out, t), batch_slice(c.clean.frames, t));
    }
    return s / n;
  }

  void build() {
    Rng rng(1);
    std::vector<Tensor<float>> corpus;
    for (int i = 0; i < 64; ++i) corpus.push_back(toy_texture(64, 3, rng).reshaped({1, 3, 64, 64}));
    ImageDenoiser im(DenoiserConfig::desk(), 2);
    PretrainConfig pc;
    pc.iterations = kPretrainIters;
    pc.batch = 8;
    pc.patch = 32;
    pc.lr_start = 2e-3;
    pc.lr_end = 1e-5;
    pc.seed = 3;
    pretrain_image(im, corpus, pc);
    step0 = im.to_checkpoint();
    train = clips(kTrainClips, 10);
    val = clips(2, 20);
  }

  // Runs a schedule from step 0 and returns validation PSNR after steps 0..M.
  std::vector<double> run(FinetuneMode mode, std::vector<std::array<double, 3>>* beta_norms = nullptr) const {
    auto vd = VideoDenoiser::from_checkpoint(step0, kFrames, 7);
    std::vector<std::string> ids;
    std::vector<Tensor<float>> noisy;
    for (size_t i = 0; i < train.size(); ++i) ids.push_back("clip" + std::to_string(i)), noisy.push_back(train[i].noisy.frames);
    StepSpec base;
    base.iterations = kFinetuneIters;
    base.lr_start = kFinetuneLr;
    base.lr_end = 1e-5;
    base.batch = 4;
    base.patch = 32;
    RunOptions ro;
    ro.out_dir = scratch("trend_" + to_string(mode));
    ro.resume = false;
    ro.seed = 5;
    std::vector<double> curve;
    ro.on_step = [&](int, const VideoDenoiser& v) {
      curve.push_back(val_psnr(v));
      if (beta_norms) {
        std::array<double, 3> b{};
        for (int l = 1; l <= 3; ++l)
          for (auto x : v.module(l).beta().value().span()) b[static_cast<size_t>(l - 1)] += std::abs(x);
        beta_norms->push_back(b);
      }
    };
    run_schedule(vd, ids, noisy, NoiseModel::awgn(kSigma, 9), FinetuneSchedule::for_mode(mode, base), ro);
    fs::remove_all(ro.out_dir);
    return curve;
  }
};

TrendSetup& trend() {
  static TrendSetup s;
  static bool built = false;
  if (!built) s.build(), built = true;
  return s;
}

Outcome progressive_trend() {
  auto& s = trend();
  s.progressive = s.run(FinetuneMode::kProgressive, &s.betas);
  const auto& p = s.progressive;
  if (p.size() != 4) return {false, "expected 4 evaluation points"};
  // Step m trains tm{4-m}; its gate must be open after the step.
  bool gates = true;
  for (int m = 1; m <= 3; ++m) gates = gates && s.betas[static_cast<size_t>(m)][static_cast<size_t>(3 - m)] > 0;
  const bool ok = p[1] >= p[0] + 0.2 && p[3] >= p[1] - 0.05 && gates;
  return {ok, fmt("val PSNR step0 %.3f, step1 %.3f, step2 %.3f, step3 %.3f dB", p[0], p[1], p[2], p[3]) +
                  (gates ? ", all trained gates nonzero" : ", a trained gate stayed zero")};
}

Outcome ablation_direction() {
  auto& s = trend();
  if (s.progressive.empty()) s.progressive = s.run(FinetuneMode::kProgressive);
  const auto all = s.run(FinetuneMode::kAllParams);
  const double prog = s.progressive.back(), ap = all.back();
  return {ap <= prog + 0.1, fmt("all_params final %.3f dB vs progressive %.3f dB", ap, prog)};
}

// 9. Raw packing.
Outcome raw_packing() {
  Tensor<float> bayer({1, 2, 2}, std::vector<float>{4095, 2048, 2048, 0});
  const auto p = pack_raw_to_rgbg(bayer, CfaPattern::kRGGB, 0, 4095);
  const float g = static_cast<float>(2048.0 / 4095.0);
  const bool example = p.shape() == Shape{4, 1, 1} && p[0] == 1.0f && std::abs(p[1] - g) < 1e-7f && p[2] == 0.0f &&
                       std::abs(p[3] - g) < 1e-7f;
  Rng rng(901);
  bool round_trip = true;
  for (auto pat : {CfaPattern::kRGGB, CfaPattern::kBGGR, CfaPattern::kGRBG, CfaPattern::kGBRG}) {
    Tensor<float> raw({2, 1, 8, 10});
    for (auto& v : raw.span()) v = static_cast<float>(std::uniform_int_distribution<int>(64, 4095)(rng));
    const auto back = unpack_rgbg_to_raw(pack_raw_to_rgbg(raw, pat, 64, 4095), pat, 64, 4095);
    for (int64_t i = 0; i < raw.numel(); ++i) round_trip = round_trip && std::round(back[i]) == raw[i];
  }
  return {example && round_trip, std::string("RGGB example ") + (example ? "ok" : "wrong") + ", round trip " +
                                     (round_trip ? "exact for all four CFA orders" : "not exact")};
}

// 10. The finetune command reproduces its checkpoints byte for byte.
int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd =
      "cd '" + dir.string() + "' && '" + std::string(TAP_CLI_PATH) + "' " + args + " >>cli.log 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc != -1 && WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Outcome determinism() {
  const auto dir = scratch("determinism");
  if (run_cli(dir, "make-toy --out data --count 2 --size 32 --frames 8 --vary-direction --seed 11") != 0 ||
      run_cli(dir, "pretrain-image --corpus data/clean --out step0.ckpt --iterations 30 --batch 4 --seed 12") != 0)
    return {false, "setup commands failed; see " + (dir / "cli.log").string()};
  const std::string ft =
      "finetune --checkpoint step0.ckpt --input data/noisy --noise awgn:sigma=30/255 --iterations 10 --batch 2 "
      "--frames 5 --seed 13 --out ";
  if (run_cli(dir, ft + "run_a") != 0 || run_cli(dir, ft + "run_b") != 0)
    return {false, "finetune failed; see " + (dir / "cli.log").string()};
  int same = 0;
  for (int m = 1; m <= 3; ++m) {
    const std::string ck = "step" + std::to_string(m) + ".ckpt";
    const auto a = slurp(dir / "run_a" / ck), b = slurp(dir / "run_b" / ck);
    same += !a.empty() && a == b;
  }
  return {same == 3, fmt("%.0f/3 step checkpoints byte-identical across two runs", same)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"plugin identity", plugin_identity},
      {"DCN degeneracy", dcn_degeneracy},
      {"DCN gradient correctness", dcn_gradients},
      {"freeze integrity", freeze_integrity},
      {"noise oracles", noise_oracles},
      {"temporal-coherence metric", temporal_metric},
      {"desk-scale progressive trend", progressive_trend},
      {"ablation direction", ablation_direction},
      {"raw packing", raw_packing},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
