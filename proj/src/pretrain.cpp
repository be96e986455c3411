#include "tap/pretrain.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tap/errors.hpp"
#include "tap/finetune.hpp"
#include "tap/noise.hpp"
#include "tap/ops.hpp"

namespace tap {

void PretrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(lr_end > 0.0) || !(lr_start >= lr_end)) throw ConfigError("learning rates must satisfy lr_start >= lr_end > 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (patch < 8 || patch % 8 != 0) throw ConfigError("patch must be a positive multiple of 8");
  if (!(sigma_min >= 0.0) || !(sigma_max >= sigma_min)) throw ConfigError("need 0 <= sigma_min <= sigma_max");
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"iterations", iterations}, {"lr_start", lr_start},   {"lr_end", lr_end},       {"batch", batch},
          {"patch", patch},           {"sigma_min", sigma_min}, {"sigma_max", sigma_max}, {"augment", augment},
          {"seed", seed}};
}

PretrainBatch sample_pretrain_batch(const std::vector<Tensor<float>>& corpus, const PretrainConfig& cfg, Rng& rng) {
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  const int64_t C = corpus[0].dim(1), P = cfg.patch;
  PretrainBatch b;
  b.clean = Tensor<float>({cfg.batch, C, P, P});
  std::uniform_int_distribution<size_t> pick(0, corpus.size() - 1);
  std::uniform_real_distribution<double> sig(cfg.sigma_min, cfg.sigma_max);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int64_t i = 0; i < cfg.batch; ++i) {
    const auto& v = corpus[pick(rng)];
    if (v.ndim() != 4 || v.dim(1) != C) throw DataError("pretraining corpus mixes channel counts");
    const int64_t H = v.dim(2), W = v.dim(3);
    if (H < P || W < P)
      throw DataError("pretraining frame " + std::to_string(H) + "x" + std::to_string(W) + " is smaller than patch " +
                      std::to_string(P));
    const int64_t f = std::uniform_int_distribution<int64_t>(0, v.dim(0) - 1)(rng);
    const int64_t y0 = std::uniform_int_distribution<int64_t>(0, H - P)(rng);
    const int64_t x0 = std::uniform_int_distribution<int64_t>(0, W - P)(rng);
    bool fy = false, fx = false, tr = false;
    if (cfg.augment) fy = coin(rng), fx = coin(rng), tr = coin(rng);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < P; ++y)
        for (int64_t x = 0; x < P; ++x) {
          int64_t sy = tr ? x : y, sx = tr ? y : x;
          if (fy) sy = P - 1 - sy;
          if (fx) sx = P - 1 - sx;
          b.clean.at(i, c, y, x) = v.at(f, c, y0 + sy, x0 + sx);
        }
    b.sigmas.push_back(sig(rng));
  }
  b.noisy = b.clean;
  const int64_t per = C * P * P;
  for (int64_t i = 0; i < cfg.batch; ++i) {
    const auto n = sample_awgn<float>({per}, b.sigmas[static_cast<size_t>(i)], rng);
    for (int64_t k = 0; k < per; ++k) b.noisy[i * per + k] += n[k];
  }
  return b;
}

PretrainResult pretrain_image(ImageDenoiser& den, const std::vector<Tensor<float>>& corpus, const PretrainConfig& cfg,
                              const PretrainOptions& opts) {
  cfg.validate();
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  auto& ps = den.params();
  ps.set_frozen("", false);
  const auto names = ps.names();
  Adam<Real> adam(names);
  std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(cfg.seed >> 32), 0x9e7au};
  Rng rng(seq);
  const nlohmann::json ident = {{"kind", "pretrain"}, {"config", cfg.to_json()}, {"model", den.config().to_json()}};
  int64_t start = 0;
  if (opts.resume_state && std::filesystem::exists(*opts.resume_state)) {
    const auto st = load_train_state(*opts.resume_state);
    if (st.meta != ident)
      throw ConfigError("training state " + opts.resume_state->string() + " belongs to another pretraining run");
    ps.restore(st.params);
    adam.load_state(st.adam, st.adam_steps);
    set_rng_state(rng, st.rng);
    start = st.iteration;
  }
  std::ofstream curve;
  if (opts.curve_csv) {
    if (start == 0) {
      std::ofstream(*opts.curve_csv, std::ios::binary | std::ios::trunc) << "iteration,loss,lr\n";
    } else {
      // Drop rows past the resume point.
      std::ifstream is(*opts.curve_csv);
      std::vector<std::string> keep;
      std::string line;
      while (std::getline(is, line))
        if (keep.empty() || std::stoll(line.substr(0, line.find(','))) < start) keep.push_back(line);
      std::ofstream os(*opts.curve_csv, std::ios::binary | std::ios::trunc);
      if (keep.empty()) keep.push_back("iteration,loss,lr");
      for (const auto& l : keep) os << l << "\n";
    }
    curve.open(*opts.curve_csv, std::ios::binary | std::ios::app);
    if (!curve) throw DataError("cannot write curve file " + opts.curve_csv->string());
  }
  auto save_state = [&](int64_t iteration) {
    if (!opts.resume_state) return;
    TrainState st;
    st.iteration = iteration;
    st.rng = rng_state(rng);
    st.adam_steps = adam.steps_taken();
    st.params = ps.snapshot();
    st.adam = adam.state();
    st.meta = ident;
    curve.flush();
    save_train_state(*opts.resume_state, st);
  };

  PretrainResult res;
  res.iterations = start;
  const auto entry = ps.snapshot();
  for (int64_t it = start; it < cfg.iterations; ++it) {
    if (opts.stop_after >= 0 && it >= opts.stop_after) {
      save_state(it);
      return res;
    }
    const double lr = cosine_lr(it, cfg.iterations, cfg.lr_start, cfg.lr_end);
    const auto b = sample_pretrain_batch(corpus, cfg, rng);
    std::string err;
    double lv = 0;
    try {
      const auto out = den.backbone().forward(Var<Real>(b.noisy));
      const auto loss = ops::l1_loss(out, b.clean);
      lv = loss.value()[0];
      if (std::isfinite(lv))
        backward(loss);
      else
        err = "non-finite loss";
    } catch (const NumericError& e) {
      err = e.what();
    }
    if (!err.empty()) {
      ps.restore(entry);
      throw NumericError(err + " at pretraining iteration " + std::to_string(it) + "; parameters restored");
    }
    adam.step(ps, lr);
    ps.zero_grad();
    res.last_loss = lv;
    res.iterations = it + 1;
    if (curve.is_open()) {
      char row[96];
      std::snprintf(row, sizeof(row), "%lld,%.9g,%.12g\n", static_cast<long long>(it), lv, lr);
      curve << row;
    }
    if (opts.on_log && opts.log_every > 0 && (it + 1) % opts.log_every == 0) opts.on_log(it + 1, lv);
    if (opts.resume_every > 0 && (it + 1) % opts.resume_every == 0 && it + 1 < cfg.iterations) save_state(it + 1);
  }
  if (opts.resume_state) std::filesystem::remove(*opts.resume_state);
  res.completed = true;
  return res;
}

}  // namespace tap
