#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tap/noise.hpp"
#include "tap/video_denoiser.hpp"

namespace tap {

enum class FinetuneMode { kProgressive, kAllParams, kJointModules, kRepeatTwice };

std::string to_string(FinetuneMode m);
FinetuneMode parse_finetune_mode(const std::string& s);

struct StepSpec {
  int target_level = 3;  // 1..3; 0 trains all three modules (joint mode)
  int64_t iterations = 2000;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  int64_t batch = 4;
  int64_t patch = 160;

  nlohmann::json to_json() const;
  static StepSpec from_json(const nlohmann::json& j);
};

struct FinetuneSchedule {
  FinetuneMode mode = FinetuneMode::kProgressive;
  std::vector<StepSpec> steps;

  // Step list for a mode with shared hyperparameters: progressive and
  // all_params visit levels 3, 2, 1; repeat_twice does that twice; joint runs
  // three rounds over all modules.
  static FinetuneSchedule for_mode(FinetuneMode mode, const StepSpec& base);

  void validate() const;
  nlohmann::json to_json() const;
  static FinetuneSchedule from_json(const nlohmann::json& j);
};

// B windows of T noisy frames plus their pseudo-clean central targets, all
// cropped at the same origin.
struct TrainBatch {
  struct Origin {
    size_t video = 0;
    int64_t frame = 0;
    int64_t y = 0, x = 0;
  };
  Tensor<float> inputs;   // (B*T) x C x patch x patch, window-major
  Tensor<float> targets;  // B x C x patch x patch
  std::vector<Origin> origins;
};

// Videos smaller than the patch are reflect-padded first.
TrainBatch sample_batch(const PseudoPairSet& pairs, Rng& rng, int64_t patch, int64_t frames, int64_t batch);

// Parameter prefixes updated at (1-based) step m of a schedule.
std::vector<std::string> trainable_prefixes(const FinetuneSchedule& schedule, size_t step);

struct StepOptions {
  std::vector<std::string> trainable;  // parameter prefixes; empty means tm{target_level}.
  uint64_t seed = 0;
  std::optional<std::filesystem::path> curve_csv;     // iteration,loss,lr
  std::optional<std::filesystem::path> resume_state;  // mid-step state, read when present
  int64_t resume_every = 0;                           // iterations between state writes
  int64_t stop_after = -1;                            // stop early (for interruption tests)
  int64_t resample_every = 0;                         // redraw pseudo-noisy frames every n iterations
};

struct StepResult {
  bool completed = false;
  int64_t iterations_run = 0;
  double last_loss = 0;
};

// Trains the selected parameters with Adam on the L1 loss between the video
// denoiser output and pseudo-clean targets, cosine lr from lr_start to lr_end.
// Everything else is frozen. Requires pairs.source_step == step_index + 1 and
// increments step_index on completion. A non-finite loss restores the
// parameters held at entry and throws NumericError.
StepResult finetune_step(VideoDenoiser& vd, const PseudoPairSet& pairs, const StepSpec& spec,
                         const StepOptions& opts = {});

struct RunOptions {
  std::filesystem::path out_dir;
  uint64_t seed = 0;
  bool resume = true;              // reuse finished step{m}.ckpt and mid-step state
  bool keep_pairs = false;         // persist pseudo pairs under out_dir/pairs_step{m}
  int64_t resume_every = 0;
  int64_t resample_every = 0;
  std::function<void(int step, const VideoDenoiser&)> on_step;  // after each step (and at step 0)
  std::function<void(const std::string&)> log;
};

// Runs the whole schedule: pseudo pairs from the current denoiser (frame by
// frame at step 1), then finetune_step, writing out_dir/step{m}.ckpt each time.
void run_schedule(VideoDenoiser& vd, const std::vector<std::string>& video_ids,
                  const std::vector<Tensor<float>>& noisy_videos, const NoiseModel& model,
                  const FinetuneSchedule& schedule, const RunOptions& opts);

// Requires progressive or repeat_twice mode.
void run_progressive(VideoDenoiser& vd, const std::vector<std::string>& video_ids,
                     const std::vector<Tensor<float>>& noisy_videos, const NoiseModel& model,
                     const FinetuneSchedule& schedule, const RunOptions& opts);

// Requires all_params or joint_modules mode.
void run_ablation_mode(VideoDenoiser& vd, const std::vector<std::string>& video_ids,
                       const std::vector<Tensor<float>>& noisy_videos, const NoiseModel& model,
                       const FinetuneSchedule& schedule, const RunOptions& opts);

// Training state for resumable loops: parameters, Adam moments, RNG and counters.
struct TrainState {
  int64_t iteration = 0;
  std::string rng;  // textual engine state
  int64_t adam_steps = 0;
  std::map<std::string, Tensor<float>> params;
  std::map<std::string, Tensor<float>> adam;
  nlohmann::json meta = nlohmann::json::object();
};

void save_train_state(const std::filesystem::path& path, const TrainState& s);
TrainState load_train_state(const std::filesystem::path& path);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& s);

}  // namespace tap
