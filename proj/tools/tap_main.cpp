#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tap/checkpoint.hpp"
#include "tap/data.hpp"
#include "tap/errors.hpp"
#include "tap/eval.hpp"
#include "tap/finetune.hpp"
#include "tap/noise.hpp"
#include "tap/pretrain.hpp"
#include "tap/video_denoiser.hpp"

namespace fs = std::filesystem;
using tap::ConfigError;
using tap::DataError;

namespace {

void say(const std::string& s) { std::cerr << "[tap] " << s << "\n"; }

// Options shared by commands that read videos.
struct Input {
  std::string colorspace = "srgb";
  std::string cfa = "RGGB";
  int bit_depth = 0;

  tap::ColorSpace space() const {
    if (colorspace == "srgb") return tap::ColorSpace::kSrgb;
    if (colorspace == "raw_rgbg") return tap::ColorSpace::kRawRgbg;
    throw ConfigError("unknown colorspace '" + colorspace + "' (expected srgb or raw_rgbg)");
  }
  tap::RawFormat raw() const {
    if (bit_depth <= 0) throw ConfigError("raw input requires --bit-depth");
    return {tap::parse_cfa(cfa), bit_depth};
  }
  int64_t channels() const { return space() == tap::ColorSpace::kSrgb ? 3 : 4; }
};

void add_input_options(CLI::App* sub, Input& in) {
  sub->add_option("--colorspace", in.colorspace, "srgb or raw_rgbg")->capture_default_str();
  sub->add_option("--cfa", in.cfa, "Bayer order of raw input (RGGB, BGGR, GRBG, GBRG)")->capture_default_str();
  sub->add_option("--bit-depth", in.bit_depth, "sensor bit depth of raw input")->capture_default_str();
}

bool has_frames(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") return true;
  return false;
}

// A root holding PNG frames is one video; otherwise each subdirectory is one.
std::vector<std::pair<std::string, tap::VideoTensor>> load_videos(const fs::path& root, const Input& in) {
  if (!fs::is_directory(root)) throw DataError("input directory not found: " + root.string());
  std::vector<fs::path> dirs;
  if (has_frames(root)) {
    dirs.push_back(root);
  } else {
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw DataError("no videos under " + root.string());
  std::vector<std::pair<std::string, tap::VideoTensor>> out;
  for (const auto& d : dirs) {
    const std::string id = d == root ? fs::path(root).lexically_normal().filename().string() : d.filename().string();
    if (in.space() == tap::ColorSpace::kSrgb)
      out.emplace_back(id.empty() ? "video" : id, tap::load_srgb_video(d));
    else
      out.emplace_back(id.empty() ? "video" : id, tap::load_raw_video(d, in.raw()));
  }
  return out;
}

fs::path video_dir(const fs::path& root, const std::string& id) {
  return has_frames(root) ? root : root / id;
}

std::pair<double, double> raw_levels(const fs::path& dir) {
  std::ifstream is(dir / "raw.json");
  if (!is) throw DataError("missing raw.json in " + dir.string());
  try {
    const auto j = nlohmann::json::parse(is);
    return {j.at("black_level").get<double>(), j.at("white_level").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed raw.json in " + dir.string() + ": " + e.what());
  }
}

tap::NoiseModel noise_model(const std::string& noise, const std::string& calibration, uint64_t seed) {
  if (noise.empty()) throw ConfigError("--noise is required");
  if (noise.rfind("iso:", 0) == 0) {
    if (calibration.empty()) throw ConfigError("--noise iso:<n> requires --calibration");
    const int iso = static_cast<int>(tap::parse_scalar(noise.substr(4), "iso"));
    return tap::CalibrationTable::load(calibration).model_for(iso, seed);
  }
  return tap::NoiseModel::parse(noise, seed);
}

void check_profile(const std::string& profile, const tap::DenoiserConfig& cfg) {
  if (!profile.empty() && tap::parse_profile(profile) != cfg.profile)
    throw ConfigError("checkpoint/profile mismatch: checkpoint is '" + tap::to_string(cfg.profile) +
                      "', requested '" + profile + "'");
}

void check_channels(const tap::DenoiserConfig& cfg, int64_t channels) {
  if (cfg.in_channels != channels)
    throw ConfigError("checkpoint expects " + std::to_string(cfg.in_channels) + " channels, input has " +
                      std::to_string(channels));
}

tap::DenoiserConfig checkpoint_backbone(const tap::CheckpointFile& ck) {
  const auto kind = ck.meta.value("kind", "");
  try {
    if (kind == "image") return tap::DenoiserConfig::from_json(ck.meta.at("config"));
    if (kind == "video") return tap::DenoiserConfig::from_json(ck.meta.at("config").at("backbone"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint config: ") + e.what());
  }
  throw ConfigError("not a denoiser checkpoint (kind '" + kind + "')");
}

tap::CheckpointFile read_required(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw DataError(what + " not found: " + path);
  return tap::read_checkpoint(path);
}

// Logs the resolved option set and keeps a copy next to the outputs.
nlohmann::json resolved_config(CLI::App* sub, const std::optional<fs::path>& out_dir) {
  // Written as a [command] section so the log can be fed back through --config.
  const std::string text = "[" + sub->get_name() + "]\n" + sub->config_to_str(true, false);
  std::cerr << "[tap] resolved config for " << sub->get_name() << ":\n" << text;
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream(*out_dir / (sub->get_name() + ".resolved.toml"), std::ios::binary) << text;
  }
  nlohmann::json j = nlohmann::json::object();
  for (const CLI::Option* o : sub->get_options()) {
    if (o->get_name().empty() || o->get_single_name().rfind("help", 0) == 0 || o->get_single_name() == "config") continue;
    const auto& r = o->results();
    if (!r.empty())
      j[o->get_single_name()] = r.size() == 1 ? nlohmann::json(r[0]) : nlohmann::json(r);
    else
      j[o->get_single_name()] = o->get_default_str();
  }
  j["command"] = sub->get_name();
  return j;
}

std::vector<tap::Tensor<float>> frames_of(const std::vector<std::pair<std::string, tap::VideoTensor>>& vids) {
  std::vector<tap::Tensor<float>> out;
  for (const auto& [id, v] : vids) out.push_back(v.frames);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tap: temporal plug-in fine-tuning for unsupervised video denoising"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  // Config files hold one [command] section; flags given on the command line win.
  app.set_config("--config", "", "TOML/INI file with a [command] section; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  auto config_opt = [](CLI::App* sub) {
    sub->fallthrough();
    sub->allow_config_extras(CLI::config_extras_mode::error);
  };

  // pretrain-image
  struct {
    std::string corpus, out, profile = "desk", curve, state, sigma_min = "10/255", sigma_max = "55/255";
    tap::PretrainConfig cfg;
    bool no_augment = false;
    int64_t resume_every = 0, log_every = 100;
    Input in;
  } pre;
  auto* c_pre = app.add_subcommand("pretrain-image", "Train the image denoiser on synthetic AWGN pairs (step 0)");
  config_opt(c_pre);
  c_pre->add_option("--corpus", pre.corpus, "clean frame corpus (video directories)")->required();
  c_pre->add_option("--out", pre.out, "output step-0 checkpoint")->required();
  c_pre->add_option("--profile", pre.profile, "desk or full")->capture_default_str();
  c_pre->add_option("--iterations", pre.cfg.iterations)->capture_default_str();
  c_pre->add_option("--lr-start", pre.cfg.lr_start)->capture_default_str();
  c_pre->add_option("--lr-end", pre.cfg.lr_end)->capture_default_str();
  c_pre->add_option("--batch", pre.cfg.batch)->capture_default_str();
  c_pre->add_option("--patch", pre.cfg.patch)->capture_default_str();
  c_pre->add_option("--sigma-min", pre.sigma_min, "lower noise level, e.g. 10/255")->capture_default_str();
  c_pre->add_option("--sigma-max", pre.sigma_max, "upper noise level, e.g. 55/255")->capture_default_str();
  c_pre->add_flag("--no-augment", pre.no_augment, "disable flips and transposes");
  c_pre->add_option("--seed", pre.cfg.seed)->capture_default_str();
  c_pre->add_option("--curve", pre.curve, "loss curve CSV (default <out>.curve.csv)");
  c_pre->add_option("--state", pre.state, "resume state file (default <out>.state)");
  c_pre->add_option("--resume-every", pre.resume_every, "iterations between state writes (0 = never)")
      ->capture_default_str();
  c_pre->add_option("--log-every", pre.log_every)->capture_default_str();
  add_input_options(c_pre, pre.in);

  // make-toy
  struct {
    std::string out, kind = "translating", sigma = "30/255";
    tap::ToyOptions opt;
    int64_t count = 1;
    uint64_t seed = 0;
    bool vary_direction = false;
  } toy;
  auto* c_toy = app.add_subcommand("make-toy", "Write synthetic clean/noisy toy clips");
  config_opt(c_toy);
  c_toy->add_option("--out", toy.out, "output root; writes clean/<id> and noisy/<id>")->required();
  c_toy->add_option("--kind", toy.kind, "static12 or translating")->capture_default_str();
  c_toy->add_option("--count", toy.count)->capture_default_str();
  c_toy->add_option("--size", toy.opt.size)->capture_default_str();
  c_toy->add_option("--frames", toy.opt.frames)->capture_default_str();
  c_toy->add_option("--shift-x", toy.opt.shift_x, "px per frame")->capture_default_str();
  c_toy->add_option("--shift-y", toy.opt.shift_y, "px per frame")->capture_default_str();
  c_toy->add_flag("--subpixel", toy.opt.subpixel, "allow fractional shifts");
  c_toy->add_flag("--vary-direction", toy.vary_direction, "rotate the shift by 90 degrees per clip");
  c_toy->add_option("--sigma", toy.sigma, "AWGN level, e.g. 30/255")->capture_default_str();
  c_toy->add_option("--seed", toy.seed)->capture_default_str();

  // make-pairs
  struct {
    std::string checkpoint, input, out, noise, calibration, profile;
    int64_t frames = 5, tile = 0;
    uint64_t seed = 0;
    Input in;
  } mp;
  auto* c_mp = app.add_subcommand("make-pairs", "Build pseudo noisy-clean pairs from a denoiser checkpoint");
  config_opt(c_mp);
  c_mp->add_option("--checkpoint", mp.checkpoint)->required();
  c_mp->add_option("--input", mp.input, "noisy video root")->required();
  c_mp->add_option("--out", mp.out, "output pair directory")->required();
  c_mp->add_option("--noise", mp.noise, "awgn:sigma=<v>, pg:alpha=<a>,delta=<d> or iso:<n>")->required();
  c_mp->add_option("--calibration", mp.calibration, "ISO calibration table for iso:<n>");
  c_mp->add_option("--profile", mp.profile, "expected checkpoint profile (optional)");
  c_mp->add_option("--frames", mp.frames, "temporal window T")->capture_default_str();
  c_mp->add_option("--tile", mp.tile, "tile size for inference (0 = whole frame)")->capture_default_str();
  c_mp->add_option("--seed", mp.seed)->capture_default_str();
  add_input_options(c_mp, mp.in);

  // finetune
  struct {
    std::string checkpoint, input, out, noise, calibration, profile, mode = "progressive";
    tap::StepSpec spec;
    int64_t frames = 5, resume_every = 0, resample_every = 0;
    uint64_t seed = 0;
    bool no_resume = false, keep_pairs = false;
    Input in;
  } ft;
  ft.spec.patch = 0;
  auto* c_ft = app.add_subcommand("finetune", "Fine-tune the temporal modules from a step-0 checkpoint");
  config_opt(c_ft);
  c_ft->add_option("--checkpoint", ft.checkpoint, "step-0 checkpoint")->required();
  c_ft->add_option("--input", ft.input, "noisy training video root")->required();
  c_ft->add_option("--out", ft.out, "output directory for step checkpoints and curves")->required();
  c_ft->add_option("--noise", ft.noise, "awgn:sigma=<v>, pg:alpha=<a>,delta=<d> or iso:<n>")->required();
  c_ft->add_option("--calibration", ft.calibration, "ISO calibration table for iso:<n>");
  c_ft->add_option("--profile", ft.profile, "expected checkpoint profile (optional)");
  c_ft->add_option("--mode", ft.mode, "progressive, all_params, joint_modules or repeat_twice")->capture_default_str();
  c_ft->add_option("--iterations", ft.spec.iterations, "iterations per step")->capture_default_str();
  c_ft->add_option("--lr-start", ft.spec.lr_start)->capture_default_str();
  c_ft->add_option("--lr-end", ft.spec.lr_end)->capture_default_str();
  c_ft->add_option("--batch", ft.spec.batch)->capture_default_str();
  c_ft->add_option("--patch", ft.spec.patch, "crop size (0 = 160 full, 32 desk)")->capture_default_str();
  c_ft->add_option("--frames", ft.frames, "temporal window T")->capture_default_str();
  c_ft->add_option("--seed", ft.seed)->capture_default_str();
  c_ft->add_flag("--no-resume", ft.no_resume, "ignore finished steps and saved state in --out");
  c_ft->add_option("--resume-every", ft.resume_every, "iterations between state writes (0 = never)")
      ->capture_default_str();
  c_ft->add_option("--resample-every", ft.resample_every, "redraw pseudo-noisy frames every n iterations")
      ->capture_default_str();
  c_ft->add_flag("--keep-pairs", ft.keep_pairs, "persist the pseudo pairs of each step");
  add_input_options(c_ft, ft.in);

  // denoise
  struct {
    std::string checkpoint, input, out, clean, profile;
    int64_t frames = 5, tile = 0, overlap = 16;
    Input in;
  } dn;
  auto* c_dn = app.add_subcommand("denoise", "Denoise videos with a checkpoint of any step");
  config_opt(c_dn);
  c_dn->add_option("--checkpoint", dn.checkpoint)->required();
  c_dn->add_option("--input", dn.input, "noisy video root")->required();
  c_dn->add_option("--out", dn.out, "output root")->required();
  c_dn->add_option("--clean", dn.clean, "ground-truth root; enables report.csv");
  c_dn->add_option("--profile", dn.profile, "expected checkpoint profile (optional)");
  c_dn->add_option("--frames", dn.frames, "temporal window T for image checkpoints")->capture_default_str();
  c_dn->add_option("--tile", dn.tile, "tile size (0 = whole frame)")->capture_default_str();
  c_dn->add_option("--overlap", dn.overlap, "tile overlap")->capture_default_str();
  add_input_options(c_dn, dn.in);

  // eval
  struct {
    std::vector<std::string> pred;
    std::vector<int> steps;
    std::string clean, out, curve;
    Input in;
  } ev;
  auto* c_ev = app.add_subcommand("eval", "Score denoised videos against ground truth");
  config_opt(c_ev);
  c_ev->add_option("--pred", ev.pred, "denoised video root; repeat for several states")->required();
  c_ev->add_option("--steps", ev.steps, "step label per --pred (default 0, 1, ...)");
  c_ev->add_option("--clean", ev.clean, "ground-truth root")->required();
  c_ev->add_option("--out", ev.out, "per-frame CSV")->required();
  c_ev->add_option("--curve", ev.curve, "step,mean_psnr,mean_ssim curve CSV");
  add_input_options(c_ev, ev.in);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(tap::ExitCode::kConfig);
  }

  try {
    if (*c_pre) {
      pre.cfg.sigma_min = tap::parse_scalar(pre.sigma_min, "sigma-min");
      pre.cfg.sigma_max = tap::parse_scalar(pre.sigma_max, "sigma-max");
      pre.cfg.augment = !pre.no_augment;
      pre.cfg.validate();
      const fs::path out(pre.out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      const auto run = resolved_config(c_pre, out.has_parent_path() ? std::optional(out.parent_path()) : std::nullopt);
      const auto vids = load_videos(pre.corpus, pre.in);
      const auto corpus = frames_of(vids);
      const auto profile = tap::parse_profile(pre.profile);
      const int64_t ch = pre.in.channels();
      tap::ImageDenoiser den(profile == tap::Profile::kFull ? tap::DenoiserConfig::full(ch) : tap::DenoiserConfig::desk(ch),
                             pre.cfg.seed);
      tap::PretrainOptions po;
      po.curve_csv = pre.curve.empty() ? fs::path(pre.out + ".curve.csv") : fs::path(pre.curve);
      po.resume_state = pre.state.empty() ? fs::path(pre.out + ".state") : fs::path(pre.state);
      po.resume_every = pre.resume_every;
      po.log_every = pre.log_every;
      po.on_log = [](int64_t it, double loss) {
        char b[96];
        std::snprintf(b, sizeof(b), "iteration %lld loss %.6f", static_cast<long long>(it), loss);
        say(b);
      };
      say("pretraining on " + std::to_string(corpus.size()) + " videos");
      const auto res = tap::pretrain_image(den, corpus, pre.cfg, po);
      den.save(pre.out, {{"pretrain", pre.cfg.to_json()}, {"iterations_done", res.iterations}, {"run", run}});
      say("wrote " + pre.out);
      return 0;
    }

    if (*c_toy) {
      const double sigma = tap::parse_scalar(toy.sigma, "sigma");
      const auto kind = tap::parse_toy_kind(toy.kind);
      if (toy.count < 1) throw ConfigError("count must be >= 1");
      const fs::path out(toy.out);
      resolved_config(c_toy, out);
      tap::Rng rng(toy.seed);
      for (int64_t i = 0; i < toy.count; ++i) {
        auto o = toy.opt;
        if (toy.vary_direction) {
          // Rotate (x, y) by i quarter turns.
          for (int64_t r = 0; r < i % 4; ++r) {
            const double sx = o.shift_x;
            o.shift_x = -o.shift_y;
            o.shift_y = sx;
          }
        }
        const auto clip = tap::make_toy_dataset(kind, o, sigma, rng);
        char id[32];
        std::snprintf(id, sizeof(id), "toy%03lld", static_cast<long long>(i));
        tap::save_srgb_video(out / "clean" / id, clip.clean.frames);
        tap::save_srgb_video(out / "noisy" / id, clip.noisy.frames);
      }
      say("wrote " + std::to_string(toy.count) + " clips to " + toy.out);
      return 0;
    }

    if (*c_mp) {
      const fs::path out(mp.out);
      const auto run = resolved_config(c_mp, out);
      const auto ck = read_required(mp.checkpoint, "checkpoint");
      const auto bcfg = checkpoint_backbone(ck);
      check_profile(mp.profile, bcfg);
      auto vd = tap::VideoDenoiser::from_checkpoint(ck, ck.meta.value("kind", "") == "image" ? mp.frames : 0, mp.seed);
      vd.set_tile(mp.tile);
      const auto vids = load_videos(mp.input, mp.in);
      check_channels(bcfg, mp.in.channels());
      std::vector<std::string> ids;
      for (const auto& v : vids) ids.push_back(v.first);
      const auto model = noise_model(mp.noise, mp.calibration, mp.seed);
      const int step = vd.step_index();
      tap::VideoFn fn = [&](const tap::Tensor<float>& v) {
        return step == 0 ? vd.denoise_image(v) : vd.denoise_video(v);
      };
      auto pairs = tap::make_pseudo_pairs(ids, frames_of(vids), fn, model, step + 1);
      pairs.provenance = {{"checkpoint", fs::path(mp.checkpoint).filename().string()},
                          {"denoiser", step == 0 ? "image" : "video"},
                          {"denoiser_step", step},
                          {"run", run}};
      tap::save_pseudo_pairs(out, pairs);
      say("wrote " + std::to_string(pairs.size()) + " pseudo pair videos (source_step " +
          std::to_string(pairs.source_step) + ") to " + mp.out);
      return 0;
    }

    if (*c_ft) {
      const fs::path out(ft.out);
      resolved_config(c_ft, out);
      const auto ck = read_required(ft.checkpoint, "step-0 checkpoint");
      const auto bcfg = checkpoint_backbone(ck);
      check_profile(ft.profile, bcfg);
      if (ck.meta.value("step_index", 0) != 0)
        throw ConfigError("finetune needs a step-0 checkpoint, got step " +
                          std::to_string(ck.meta.value("step_index", 0)));
      auto vd = tap::VideoDenoiser::from_checkpoint(ck, ft.frames, ft.seed);
      const auto vids = load_videos(ft.input, ft.in);
      check_channels(bcfg, ft.in.channels());
      std::vector<std::string> ids;
      for (const auto& v : vids) ids.push_back(v.first);
      if (ft.spec.patch == 0) ft.spec.patch = bcfg.profile == tap::Profile::kFull ? 160 : 32;
      const auto schedule = tap::FinetuneSchedule::for_mode(tap::parse_finetune_mode(ft.mode), ft.spec);
      schedule.validate();
      tap::RunOptions ro;
      ro.out_dir = out;
      ro.seed = ft.seed;
      ro.resume = !ft.no_resume;
      ro.keep_pairs = ft.keep_pairs;
      ro.resume_every = ft.resume_every;
      ro.resample_every = ft.resample_every;
      ro.log = say;
      tap::run_schedule(vd, ids, frames_of(vids), noise_model(ft.noise, ft.calibration, ft.seed), schedule, ro);
      say("finished " + std::to_string(schedule.steps.size()) + " steps in " + ft.out);
      return 0;
    }

    if (*c_dn) {
      const fs::path out(dn.out);
      const auto run = resolved_config(c_dn, out);
      const auto ck = read_required(dn.checkpoint, "checkpoint");
      const auto bcfg = checkpoint_backbone(ck);
      check_profile(dn.profile, bcfg);
      auto vd = tap::VideoDenoiser::from_checkpoint(ck, ck.meta.value("kind", "") == "image" ? dn.frames : 0, 0);
      vd.set_tile(dn.tile, dn.overlap);
      const auto vids = load_videos(dn.input, dn.in);
      check_channels(bcfg, dn.in.channels());
      std::optional<std::vector<std::pair<std::string, tap::VideoTensor>>> clean;
      if (!dn.clean.empty()) clean = load_videos(dn.clean, dn.in);
      tap::MetricReport report;
      report.step = vd.step_index();
      report.config = run;
      double tc_sum = 0;
      const auto t0 = std::chrono::steady_clock::now();
      for (size_t i = 0; i < vids.size(); ++i) {
        const auto& [id, v] = vids[i];
        // Step 0 runs frame by frame; the plug-in modules are inactive there.
        const auto den = vd.step_index() == 0 ? vd.denoise_image(v.frames) : vd.denoise_video(v.frames);
        if (v.colorspace == tap::ColorSpace::kSrgb) {
          tap::save_srgb_video(out / id, den);
        } else {
          const auto [black, white] = raw_levels(video_dir(dn.input, id));
          tap::VideoTensor packed{den, v.colorspace, v.meta};
          tap::save_raw_video(out / id, packed, dn.in.raw(), black, white);
        }
        if (clean) {
          const auto it = std::find_if(clean->begin(), clean->end(), [&](const auto& c) { return c.first == id; });
          if (it == clean->end()) throw DataError("no ground truth for video " + id);
          tap::evaluate_video(report, id, den, it->second.frames);
          if (den.dim(0) >= 2) tc_sum += tap::temporal_coherence(den);
        }
        say("denoised " + id);
      }
      if (clean) {
        report.temporal_coherence = tc_sum / static_cast<double>(vids.size());
        report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        tap::emit_report({report}, out / "report.csv");
        char b[96];
        std::snprintf(b, sizeof(b), "mean PSNR %.4f dB, SSIM %.4f", report.mean_psnr(), report.mean_ssim());
        say(b);
      }
      return 0;
    }

    if (*c_ev) {
      if (!ev.steps.empty() && ev.steps.size() != ev.pred.size())
        throw ConfigError("--steps needs one value per --pred");
      const fs::path out(ev.out);
      const auto run = resolved_config(c_ev, out.has_parent_path() ? std::optional(out.parent_path()) : std::nullopt);
      const auto clean = load_videos(ev.clean, ev.in);
      std::map<std::string, const tap::VideoTensor*> by_id;
      for (const auto& [id, v] : clean) by_id[id] = &v;
      std::vector<tap::MetricReport> reports;
      for (size_t k = 0; k < ev.pred.size(); ++k) {
        tap::MetricReport r;
        r.step = ev.steps.empty() ? static_cast<int>(k) : ev.steps[k];
        r.config = run;
        double tc_sum = 0;
        const auto pred = load_videos(ev.pred[k], ev.in);
        for (const auto& [id, v] : pred) {
          const auto it = by_id.find(id);
          if (it == by_id.end()) throw DataError("no ground truth for video " + id);
          tap::evaluate_video(r, id, v.frames, it->second->frames);
          if (v.frames.dim(0) >= 2) tc_sum += tap::temporal_coherence(v.frames);
        }
        r.temporal_coherence = tc_sum / static_cast<double>(pred.size());
        char b[128];
        std::snprintf(b, sizeof(b), "step %d: mean PSNR %.4f dB, SSIM %.4f", r.step, r.mean_psnr(), r.mean_ssim());
        say(b);
        reports.push_back(std::move(r));
      }
      tap::emit_report(reports, out, ev.curve.empty() ? std::nullopt : std::optional<fs::path>(ev.curve));
      return 0;
    }
  } catch (const tap::Error& e) {
    say(std::string("error: ") + e.what());
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    say(std::string("error: ") + e.what());
    return static_cast<int>(tap::ExitCode::kData);
  }
  return 0;
}
