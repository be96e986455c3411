#include "tap/finetune.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tap/errors.hpp"
#include "tap/ops.hpp"

namespace tap {

std::string to_string(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::kProgressive:
      return "progressive";
    case FinetuneMode::kAllParams:
      return "all_params";
    case FinetuneMode::kJointModules:
      return "joint_modules";
    case FinetuneMode::kRepeatTwice:
      return "repeat_twice";
  }
  return "?";
}

FinetuneMode parse_finetune_mode(const std::string& s) {
  for (auto m : {FinetuneMode::kProgressive, FinetuneMode::kAllParams, FinetuneMode::kJointModules,
                 FinetuneMode::kRepeatTwice})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown fine-tuning mode '" + s +
                    "' (expected progressive, all_params, joint_modules or repeat_twice)");
}

nlohmann::json StepSpec::to_json() const {
  return {{"target_level", target_level}, {"iterations", iterations}, {"lr_start", lr_start},
          {"lr_end", lr_end},             {"batch", batch},           {"patch", patch}};
}

StepSpec StepSpec::from_json(const nlohmann::json& j) {
  try {
    StepSpec s;
    s.target_level = j.at("target_level").get<int>();
    s.iterations = j.at("iterations").get<int64_t>();
    s.lr_start = j.at("lr_start").get<double>();
    s.lr_end = j.at("lr_end").get<double>();
    s.batch = j.at("batch").get<int64_t>();
    s.patch = j.at("patch").get<int64_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed step spec: ") + e.what());
  }
}

namespace {

void check_spec(const StepSpec& s, bool allow_zero_iterations) {
  if (s.target_level < 0 || s.target_level > 3) throw ConfigError("target level must be 0..3");
  if (s.iterations < 0 || (!allow_zero_iterations && s.iterations == 0))
    throw ConfigError("iterations must be > 0, got " + std::to_string(s.iterations));
  if (!(s.lr_end > 0.0) || !(s.lr_start >= s.lr_end))
    throw ConfigError("learning rates must satisfy lr_start >= lr_end > 0");
  if (s.batch < 1) throw ConfigError("batch must be >= 1");
  if (s.patch < 8 || s.patch % 8 != 0) throw ConfigError("patch must be a positive multiple of 8");
}

std::vector<int> levels_of(const FinetuneSchedule& s) {
  std::vector<int> l;
  for (const auto& st : s.steps) l.push_back(st.target_level);
  return l;
}

std::string module_prefix(int level) { return "tm" + std::to_string(level) + "."; }

void copy_frame_crop(const Tensor<float>& video, int64_t frame, int64_t y0, int64_t x0, int64_t patch,
                     Tensor<float>& dst, int64_t dst_index) {
  const int64_t C = video.dim(1), H = video.dim(2), W = video.dim(3);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < patch; ++y) {
      const float* src = video.data() + ((frame * C + c) * H + y0 + y) * W + x0;
      float* d = dst.data() + ((dst_index * C + c) * patch + y) * patch;
      std::copy(src, src + patch, d);
    }
}

bool params_finite(const ParamStore<Real>& ps, const std::vector<std::string>& names) {
  for (const auto& n : names)
    if (!ps.get(n).value().all_finite()) return false;
  return true;
}

std::string fmt(const char* f, double v) {
  char b[48];
  std::snprintf(b, sizeof(b), f, v);
  return b;
}

// Keeps header and rows with iteration < keep so a resumed run does not duplicate lines.
void prepare_curve(const std::filesystem::path& path, int64_t keep) {
  std::vector<std::string> lines;
  if (keep > 0) {
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) {
      if (lines.empty()) {
        lines.push_back(line);
        continue;
      }
      if (std::stoll(line.substr(0, line.find(','))) < keep) lines.push_back(line);
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write curve file " + path.string());
  if (lines.empty()) lines.push_back("iteration,loss,lr");
  for (const auto& l : lines) os << l << "\n";
}

}  // namespace

FinetuneSchedule FinetuneSchedule::for_mode(FinetuneMode mode, const StepSpec& base) {
  FinetuneSchedule s;
  s.mode = mode;
  auto add = [&](int level) {
    StepSpec st = base;
    st.target_level = level;
    s.steps.push_back(st);
  };
  switch (mode) {
    case FinetuneMode::kProgressive:
    case FinetuneMode::kAllParams:
      for (int l : {3, 2, 1}) add(l);
      break;
    case FinetuneMode::kRepeatTwice:
      for (int l : {3, 2, 1, 3, 2, 1}) add(l);
      break;
    case FinetuneMode::kJointModules:
      for (int r = 0; r < 3; ++r) add(0);
      break;
  }
  return s;
}

void FinetuneSchedule::validate() const {
  if (steps.empty()) throw ConfigError("schedule has no steps");
  for (const auto& s : steps) check_spec(s, false);
  const auto l = levels_of(*this);
  std::vector<int> want;
  switch (mode) {
    case FinetuneMode::kProgressive:
    case FinetuneMode::kAllParams:
      want = {3, 2, 1};
      break;
    case FinetuneMode::kRepeatTwice:
      want = {3, 2, 1, 3, 2, 1};
      break;
    case FinetuneMode::kJointModules:
      want = {0, 0, 0};
      break;
  }
  if (l != want) {
    std::string w;
    for (int v : want) w += (w.empty() ? "" : ",") + std::to_string(v);
    throw ConfigError(to_string(mode) + " mode needs target levels [" + w + "] in that order");
  }
}

nlohmann::json FinetuneSchedule::to_json() const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : steps) st.push_back(s.to_json());
  return {{"mode", to_string(mode)}, {"steps", st}};
}

FinetuneSchedule FinetuneSchedule::from_json(const nlohmann::json& j) {
  FinetuneSchedule s;
  try {
    s.mode = parse_finetune_mode(j.at("mode").get<std::string>());
    for (const auto& e : j.at("steps")) s.steps.push_back(StepSpec::from_json(e));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed schedule: ") + e.what());
  }
  return s;
}

TrainBatch sample_batch(const PseudoPairSet& pairs, Rng& rng, int64_t patch, int64_t frames, int64_t batch) {
  if (pairs.size() == 0) throw ConfigError("sample_batch: empty pseudo-pair set");
  if (frames < 1 || frames % 2 == 0) throw ConfigError("sample_batch: window length must be odd");
  const int64_t C = pairs.clean[0].dim(1);
  TrainBatch b;
  b.inputs = Tensor<float>({batch * frames, C, patch, patch});
  b.targets = Tensor<float>({batch, C, patch, patch});
  std::uniform_int_distribution<size_t> pick_video(0, pairs.size() - 1);
  for (int64_t i = 0; i < batch; ++i) {
    TrainBatch::Origin o;
    o.video = pick_video(rng);
    const Tensor<float>* clean = &pairs.clean[o.video];
    const Tensor<float>* noisy = &pairs.noisy[o.video];
    if (clean->dim(1) != C) throw DataError("sample_batch: videos differ in channel count");
    Tensor<float> pc, pn;
    if (clean->dim(2) < patch || clean->dim(3) < patch) {
      // Reflect padding cannot exceed the image, so grow in rounds.
      pc = *clean;
      pn = *noisy;
      while (pc.dim(2) < patch || pc.dim(3) < patch) {
        const int64_t pb = std::min(patch - pc.dim(2), pc.dim(2) - 1), pr = std::min(patch - pc.dim(3), pc.dim(3) - 1);
        if (pb <= 0 && pr <= 0 && (pc.dim(2) < patch || pc.dim(3) < patch))
          throw DataError("sample_batch: video too small to pad");
        pc = reflect_pad(pc, std::max<int64_t>(pb, 0), std::max<int64_t>(pr, 0));
        pn = reflect_pad(pn, std::max<int64_t>(pb, 0), std::max<int64_t>(pr, 0));
      }
      clean = &pc;
      noisy = &pn;
    }
    const int64_t N = clean->dim(0), H = clean->dim(2), W = clean->dim(3);
    o.frame = std::uniform_int_distribution<int64_t>(0, N - 1)(rng);
    o.y = std::uniform_int_distribution<int64_t>(0, H - patch)(rng);
    o.x = std::uniform_int_distribution<int64_t>(0, W - patch)(rng);
    const auto idx = window_indices(o.frame, N, frames);
    for (int64_t m = 0; m < frames; ++m)
      copy_frame_crop(*noisy, idx[static_cast<size_t>(m)], o.y, o.x, patch, b.inputs, i * frames + m);
    copy_frame_crop(*clean, o.frame, o.y, o.x, patch, b.targets, i);
    b.origins.push_back(o);
  }
  return b;
}

std::vector<std::string> trainable_prefixes(const FinetuneSchedule& schedule, size_t step) {
  if (step < 1 || step > schedule.steps.size()) throw ConfigError("step index out of range");
  const int level = schedule.steps[step - 1].target_level;
  switch (schedule.mode) {
    case FinetuneMode::kProgressive:
    case FinetuneMode::kRepeatTwice:
      return {module_prefix(level)};
    case FinetuneMode::kJointModules:
      return {module_prefix(1), module_prefix(2), module_prefix(3)};
    case FinetuneMode::kAllParams: {
      // Backbone plus every module plugged in so far, including this step's.
      std::vector<std::string> p{Backbone<Real>::kPrefix};
      for (size_t s = 1; s <= step; ++s) p.push_back(module_prefix(schedule.steps[s - 1].target_level));
      return p;
    }
  }
  return {};
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw DataError("corrupt RNG state");
}

void save_train_state(const std::filesystem::path& path, const TrainState& s) {
  CheckpointFile ck;
  ck.meta = {{"kind", "train_state"},
             {"iteration", s.iteration},
             {"rng", s.rng},
             {"adam_steps", s.adam_steps},
             {"meta", s.meta}};
  for (const auto& [n, t] : s.params) ck.tensors.emplace_back("param." + n, t);
  for (const auto& [n, t] : s.adam) ck.tensors.emplace_back("adam." + n, t);
  const auto tmp = path.string() + ".tmp";
  write_checkpoint(tmp, ck);
  std::filesystem::rename(tmp, path);
}

TrainState load_train_state(const std::filesystem::path& path) {
  const auto ck = read_checkpoint(path);
  if (ck.meta.value("kind", "") != "train_state") throw DataError(path.string() + " is not a training state file");
  TrainState s;
  try {
    s.iteration = ck.meta.at("iteration").get<int64_t>();
    s.rng = ck.meta.at("rng").get<std::string>();
    s.adam_steps = ck.meta.at("adam_steps").get<int64_t>();
    s.meta = ck.meta.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed training state " + path.string() + ": " + e.what());
  }
  for (const auto& [n, t] : ck.tensors) {
    if (n.rfind("param.", 0) == 0)
      s.params.emplace(n.substr(6), t);
    else if (n.rfind("adam.", 0) == 0)
      s.adam.emplace(n.substr(5), t);
  }
  return s;
}

StepResult finetune_step(VideoDenoiser& vd, const PseudoPairSet& pairs, const StepSpec& spec,
                         const StepOptions& opts) {
  check_spec(spec, true);
  pairs.validate();
  const int step = vd.step_index() + 1;
  if (pairs.source_step != step)
    throw ConfigError("pseudo pairs come from step " + std::to_string(pairs.source_step) + " but the denoiser is at step " +
                      std::to_string(step));
  auto& ps = vd.params();
  std::vector<std::string> prefixes = opts.trainable;
  if (prefixes.empty()) {
    if (spec.target_level == 0)
      prefixes = {module_prefix(1), module_prefix(2), module_prefix(3)};
    else
      prefixes = {module_prefix(spec.target_level)};
  }
  ps.set_frozen("", true);
  for (const auto& p : prefixes) ps.set_frozen(p, false);
  const auto names = ps.trainable_names();
  if (names.empty()) throw ConfigError("no trainable parameters for this step");

  const auto entry = ps.snapshot();
  Adam<Real> adam(names);
  std::seed_seq seq{static_cast<uint32_t>(opts.seed), static_cast<uint32_t>(opts.seed >> 32),
                    static_cast<uint32_t>(step), 0x5eedu};
  Rng rng(seq);
  int64_t start = 0;
  nlohmann::json ident = {{"step", step}, {"spec", spec.to_json()}, {"trainable", prefixes}};

  if (opts.resume_state && std::filesystem::exists(*opts.resume_state)) {
    const auto st = load_train_state(*opts.resume_state);
    if (st.meta != ident) throw ConfigError("training state " + opts.resume_state->string() + " belongs to another run");
    std::map<std::string, Tensor<Real>> merged = entry;
    for (const auto& [n, t] : st.params) merged[n] = t;
    ps.restore(merged);
    adam.load_state(st.adam, st.adam_steps);
    set_rng_state(rng, st.rng);
    start = st.iteration;
  }

  PseudoPairSet resampled;
  const PseudoPairSet* work = &pairs;
  if (opts.resample_every > 0) {
    resampled = pairs;
    if (start >= opts.resample_every) recorrupt(resampled, static_cast<uint64_t>(start / opts.resample_every));
    work = &resampled;
  }
  if (opts.curve_csv) prepare_curve(*opts.curve_csv, start);
  std::ofstream curve;
  if (opts.curve_csv) curve.open(*opts.curve_csv, std::ios::binary | std::ios::app);

  auto save_state = [&](int64_t iteration) {
    if (!opts.resume_state) return;
    TrainState st;
    st.iteration = iteration;
    st.rng = rng_state(rng);
    st.adam_steps = adam.steps_taken();
    for (const auto& n : names) st.params.emplace(n, ps.get(n).value());
    st.adam = adam.state();
    st.meta = ident;
    curve.flush();
    save_train_state(*opts.resume_state, st);
  };
  auto fail = [&](const std::string& why) {
    ps.restore(entry);
    throw NumericError(why + " (step " + std::to_string(step) + "; parameters restored to the start of the step)");
  };

  StepResult res;
  const int64_t T = vd.frames();
  for (int64_t it = start; it < spec.iterations; ++it) {
    if (opts.stop_after >= 0 && it >= opts.stop_after) {
      save_state(it);
      return res;
    }
    if (opts.resample_every > 0 && it > 0 && it % opts.resample_every == 0)
      recorrupt(resampled, static_cast<uint64_t>(it / opts.resample_every));
    const double lr = cosine_lr(it, spec.iterations, spec.lr_start, spec.lr_end);
    const auto b = sample_batch(*work, rng, spec.patch, T, spec.batch);
    double loss_value = 0;
    std::string err;
    try {
      const auto out = vd.forward(Var<Real>(b.inputs), spec.batch);
      const auto loss = ops::l1_loss(out, b.targets);
      loss_value = loss.value()[0];
      if (std::isfinite(loss_value))
        backward(loss);
      else
        err = "non-finite loss";
    } catch (const NumericError& e) {
      err = e.what();
    }
    if (!err.empty()) {
      ps.zero_grad();
      fail(err + " at iteration " + std::to_string(it));
    }
    adam.step(ps, lr);
    ps.zero_grad();
    if (!params_finite(ps, names)) fail("non-finite parameters after iteration " + std::to_string(it));
    res.last_loss = loss_value;
    ++res.iterations_run;
    if (curve.is_open()) curve << it << "," << fmt("%.9g", loss_value) << "," << fmt("%.12g", lr) << "\n";
    if (opts.resume_every > 0 && (it + 1) % opts.resume_every == 0 && it + 1 < spec.iterations) save_state(it + 1);
  }
  if (opts.resume_state) std::filesystem::remove(*opts.resume_state);
  vd.set_step_index(step);
  res.completed = true;
  return res;
}

void run_schedule(VideoDenoiser& vd, const std::vector<std::string>& video_ids,
                  const std::vector<Tensor<float>>& noisy_videos, const NoiseModel& model,
                  const FinetuneSchedule& schedule, const RunOptions& opts) {
  schedule.validate();
  model.validate();
  if (video_ids.empty() || video_ids.size() != noisy_videos.size())
    throw ConfigError("fine-tuning needs at least one video and one id per video");
  std::filesystem::create_directories(opts.out_dir);
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  const int base = vd.step_index();
  if (base != 0) throw ConfigError("fine-tuning must start from a step-0 denoiser, got step " + std::to_string(base));
  if (opts.on_step) opts.on_step(0, vd);
  for (size_t m = 1; m <= schedule.steps.size(); ++m) {
    const auto& spec = schedule.steps[m - 1];
    const auto ck = opts.out_dir / ("step" + std::to_string(m) + ".ckpt");
    if (opts.resume && std::filesystem::exists(ck)) {
      vd.load_weights(read_checkpoint(ck));
      if (vd.step_index() != static_cast<int>(m))
        throw ConfigError(ck.string() + " records step " + std::to_string(vd.step_index()));
      log("step " + std::to_string(m) + ": reusing " + ck.filename().string());
      if (opts.on_step) opts.on_step(static_cast<int>(m), vd);
      continue;
    }
    const bool from_image = vd.step_index() == 0;
    VideoFn fn = [&](const Tensor<float>& v) { return from_image ? vd.denoise_image(v) : vd.denoise_video(v); };
    log("step " + std::to_string(m) + ": building pseudo pairs with the " + (from_image ? "image" : "video") +
        " denoiser");
    auto pairs = make_pseudo_pairs(video_ids, noisy_videos, fn, model, static_cast<int>(m));
    pairs.provenance = {{"denoiser", from_image ? "image" : "video"},
                        {"denoiser_step", m - 1},
                        {"mode", to_string(schedule.mode)}};
    if (opts.keep_pairs) save_pseudo_pairs(opts.out_dir / ("pairs_step" + std::to_string(m)), pairs);

    StepOptions so;
    so.trainable = trainable_prefixes(schedule, m);
    so.seed = opts.seed;
    so.curve_csv = opts.out_dir / ("step" + std::to_string(m) + "_curve.csv");
    if (opts.resume) so.resume_state = opts.out_dir / ("step" + std::to_string(m) + ".state");
    so.resume_every = opts.resume_every;
    so.resample_every = opts.resample_every;
    std::string tr;
    for (const auto& p : so.trainable) tr += (tr.empty() ? "" : " ") + p;
    log("step " + std::to_string(m) + ": training [" + tr + "] for " + std::to_string(spec.iterations) +
        " iterations (" + std::to_string(vd.params().parameter_count("", false)) + " parameters in total)");
    const auto r = finetune_step(vd, pairs, spec, so);
    log("step " + std::to_string(m) + ": final loss " + fmt("%.6f", r.last_loss));
    vd.save(ck, {{"noise_model", model.to_json()},
                 {"mode", to_string(schedule.mode)},
                 {"step_spec", spec.to_json()},
                 {"trainable", so.trainable},
                 {"pairs", pairs.provenance}});
    if (opts.on_step) opts.on_step(static_cast<int>(m), vd);
  }
}

void run_progressive(VideoDenoiser& vd, const std::vector<std::string>& video_ids,
                     const std::vector<Tensor<float>>& noisy_videos, const NoiseModel& model,
                     const FinetuneSchedule& schedule, const RunOptions& opts) {
  if (schedule.mode != FinetuneMode::kProgressive && schedule.mode != FinetuneMode::kRepeatTwice)
    throw ConfigError("run_progressive needs progressive or repeat_twice mode, got " + to_string(schedule.mode));
  run_schedule(vd, video_ids, noisy_videos, model, schedule, opts);
}

void run_ablation_mode(VideoDenoiser& vd, const std::vector<std::string>& video_ids,
                       const std::vector<Tensor<float>>& noisy_videos, const NoiseModel& model,
                       const FinetuneSchedule& schedule, const RunOptions& opts) {
  if (schedule.mode != FinetuneMode::kAllParams && schedule.mode != FinetuneMode::kJointModules)
    throw ConfigError("run_ablation_mode needs all_params or joint_modules mode, got " + to_string(schedule.mode));
  run_schedule(vd, video_ids, noisy_videos, model, schedule, opts);
}

}  // namespace tap
