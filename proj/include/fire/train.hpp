#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fire/nets.hpp"

namespace fire {

struct LossWeights {
  float adv = 1.0f;
  float sim = 10.0f;
  float inv = 1.0f;
  float smooth = 1.0f;
  float latent = 1.0f;
};

struct TrainConfig {
  int steps = 2000;
  int batch = 1;
  float learn_rate = 2e-4f;
  uint64_t seed = 1;
  double warp_lo = 0.2;
  double warp_hi = 0.5;
  int image_size = 64;
  LossWeights weights;
};

TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& config, const std::string& path);

struct StepReport {
  int step = 0;
  float adv_d = 0.0f, adv_g = 0.0f, sim = 0.0f, inv = 0.0f, smooth = 0.0f, latent = 0.0f;
  std::map<std::string, float> as_map() const;
};

using TrainingLog = std::vector<StepReport>;

// Adam over a fixed parameter set; moments keyed by parameter name.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, float lr, float beta1 = 0.5f, float beta2 = 0.999f);

  void step();
  void zero_grad();

  float lr() const { return lr_; }
  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }
  const std::vector<Parameter*>& params() const { return params_; }
  std::vector<float>& moment_m(const std::string& name);
  std::vector<float>& moment_v(const std::string& name);

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<float>> m_, v_;
  float lr_, beta1_, beta2_;
  int64_t t_ = 0;
};

struct Optimizer {
  Adam generator;
  Adam discriminator;
  static Optimizer create(FireModel& model, float learn_rate);
};

// Least-squares adversarial pair: D^A scores {xA, warped_B} toward 1 and
// {synth_A} toward 0 (mirrored for B); the generator scores synth images
// toward 1 through frozen critics. Both are means over score-map terms.
std::pair<Tensor, Tensor> adversarial_losses(const RegistrationOutputs& outputs, const FireModel& model);

// Internal halves of the adversarial pair (each phase needs only one side).
Tensor discriminator_loss(const RegistrationOutputs& outputs, const FireModel& model);
Tensor generator_adversarial_loss(const RegistrationOutputs& outputs, const FireModel& model);

// L1(warp(synth_B, phi_ab), xB) + L1(warp(synth_A, phi_ba), xA)
Tensor similarity_loss(const RegistrationOutputs& outputs);

// mean squared norm of both warp compositions, penalized toward identity
Tensor inverse_consistency_loss(const RegistrationOutputs& outputs);

Tensor smoothness_loss(const RegistrationOutputs& outputs);

// L1(encode(synth_B), latent_A) + L1(encode(synth_A), latent_B), detached targets
Tensor latent_consistency_loss(const RegistrationOutputs& outputs, const FireModel& model);

// Two phases: critics update on w_adv * loss_D with generator branches
// frozen, then generator/synthesis/transform nets update on the weighted sum
// with critics frozen. Throws on NaN in any term, naming it.
StepReport train_step(FireModel& model, Optimizer& opt, const Tensor& xa, const Tensor& xb,
                      const LossWeights& weights);

using PairDataset = std::vector<std::pair<Tensor, Tensor>>;  // co-registered (xA, xB)

// Per step: sample pairs, perturb moving and fixed images with independent
// random warps drawn from config.warp_magnitude, run train_step. Deterministic
// for a given seed.
TrainingLog fit(FireModel& model, Optimizer& opt, const PairDataset& dataset, const TrainConfig& config);

struct Checkpoint {
  int version = 1;
  int dim = 2;
  int step = 0;
  TrainConfig config;
  std::vector<std::pair<std::string, Tensor>> params;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // name -> (m, v)
  int64_t t_gen = 0, t_disc = 0;
};

// Checkpoint directory: manifest.json plus one NPY per parameter (and per
// Adam moment) under params/.
void save_checkpoint(FireModel& model, Optimizer& opt, const TrainConfig& config, int step,
                     const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);
void restore_model(FireModel& model, const Checkpoint& ckpt);
void restore_optimizer(Optimizer& opt, const Checkpoint& ckpt);
FireModel model_from_checkpoint(const Checkpoint& ckpt);

void write_loss_csv(const TrainingLog& log, const std::string& path);

}  // namespace fire
