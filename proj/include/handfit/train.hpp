#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "handfit/config.hpp"
#include "handfit/model.hpp"
#include "handfit/nn.hpp"

namespace handfit {

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  static AdamWConfig from(const ModelConfig& c);
};

/// Per-parameter first/second moments and update counts.
struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::map<std::string, long> count;
};

/// One decoupled-weight-decay Adam update of `p` in place; `t` is the
/// 1-based update count of this parameter.
void adamw_update(Tensor& p, const Tensor& grad, Tensor& m, Tensor& v, long t, const AdamWConfig& c);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm);

struct Checkpoint {
  ModelConfig config;
  ParameterStore params;
  AdamState optimizer;
  long step = 0;
  std::string rng_state;
};

/// Fresh parameters for cfg's variant; the RNG is seeded from cfg.seed.
Checkpoint init_checkpoint(const ModelConfig& cfg);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ck);
/// Validates the version, the parameter key set against the stored config
/// (or `expected` if given) and every tensor shape.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);
Checkpoint deserialize_checkpoint(const std::string& bytes, const ModelConfig* expected = nullptr);

enum class Phase { One = 1, Two = 2 };

/// Phase 1 trains the pose aggregation net and the hand embedding
/// processors; phase 2 trains the denoiser and garment encoder.
bool trainable_in(Phase phase, const std::string& name);

struct StepStats {
  long step = 0;
  int t_min = 0;
  double total = 0;
  double noise = 0;
  double hand = 0;
  int crops = 0;
  double grad_norm = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  int steps = 0;  // 0 uses the config's per-phase count
  std::function<void(const StepStats&)> on_step;
};

/// Runs `steps` optimizer steps of `phase` on the prepared samples. Frozen
/// parameters are left bit-identical. Throws TrainingError on a non-finite
/// loss.
std::vector<StepStats> train_phase(Checkpoint& ck, Phase phase, const std::vector<PreparedSample>& data,
                                   const TrainOptions& opts = {});

std::vector<PreparedSample> prepare_all(const HandFitModel& model, const std::vector<SceneSample>& samples);

}  // namespace handfit
