#include "fire/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fire/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fire {

namespace {

Tensor mse_to_const(const Tensor& x, float target) {
  Tensor shifted = target == 0.0f ? x : sub(x, Tensor(x.shape(), target));
  return scale(reduce(shifted, Reduce::sumsq), 1.0f / float(x.numel()));
}

Tensor l1_between(const Tensor& a, const Tensor& b) { return reduce(sub(a, b), Reduce::l1); }

// mean over voxels of the squared residual vector norm
Tensor mean_vector_norm_sq(const Tensor& field) {
  const float factor = float(field.dim(1)) / float(field.numel());
  return scale(reduce(field, Reduce::sumsq), factor);
}

void check_loss_finite(const Tensor& loss, const char* term) {
  if (!std::isfinite(loss.item()))
    throw std::runtime_error("train: loss term '" + std::string(term) + "' is not finite");
}

}  // namespace

std::map<std::string, float> StepReport::as_map() const {
  return {{"adv_D", adv_d}, {"adv_G", adv_g}, {"sim", sim},
          {"inv", inv},     {"smooth", smooth}, {"latent", latent}};
}

Adam::Adam(std::vector<Parameter*> params, float lr, float beta1, float beta2)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.emplace_back(p->tensor.numel(), 0.0f);
    v_.emplace_back(p->tensor.numel(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(double(beta1_), double(t_));
  const double bc2 = 1.0 - std::pow(double(beta2_), double(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k]->tensor;
    const float* g = t.grad();  // zero-filled when the phase produced no grads
    float* p = t.data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * gi);
      v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] = static_cast<float>(p[i] - lr_ * mhat / (std::sqrt(vhat) + 1e-8));
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->tensor.zero_grad();
}

std::vector<float>& Adam::moment_m(const std::string& name) {
  for (size_t k = 0; k < params_.size(); ++k)
    if (params_[k]->name == name) return m_[k];
  throw std::invalid_argument("adam: unknown parameter " + name);
}

std::vector<float>& Adam::moment_v(const std::string& name) {
  for (size_t k = 0; k < params_.size(); ++k)
    if (params_[k]->name == name) return v_[k];
  throw std::invalid_argument("adam: unknown parameter " + name);
}

Optimizer Optimizer::create(FireModel& model, float learn_rate) {
  return Optimizer{Adam(model.generator_parameters(), learn_rate),
                   Adam(model.discriminator_parameters(), learn_rate)};
}

Tensor discriminator_loss(const RegistrationOutputs& outputs, const FireModel& model) {
  // generator branches frozen: critics see plain values
  const Tensor synth_a = outputs.synth_a.detach();
  const Tensor synth_b = outputs.synth_b.detach();
  const Tensor warped_a = outputs.warped_a.detach();
  const Tensor warped_b = outputs.warped_b.detach();
  Tensor terms = mse_to_const(discriminate(model, outputs.input_a.detach(), Side::A).score_map, 1.0f);
  terms = add(terms, mse_to_const(discriminate(model, warped_b, Side::A).score_map, 1.0f));
  terms = add(terms, mse_to_const(discriminate(model, synth_a, Side::A).score_map, 0.0f));
  terms = add(terms, mse_to_const(discriminate(model, outputs.input_b.detach(), Side::B).score_map, 1.0f));
  terms = add(terms, mse_to_const(discriminate(model, warped_a, Side::B).score_map, 1.0f));
  terms = add(terms, mse_to_const(discriminate(model, synth_b, Side::B).score_map, 0.0f));
  return scale(terms, 1.0f / 6.0f);
}

Tensor generator_adversarial_loss(const RegistrationOutputs& outputs, const FireModel& model) {
  Tensor terms = mse_to_const(discriminate(model, outputs.synth_a, Side::A).score_map, 1.0f);
  terms = add(terms, mse_to_const(discriminate(model, outputs.synth_b, Side::B).score_map, 1.0f));
  return scale(terms, 0.5f);
}

std::pair<Tensor, Tensor> adversarial_losses(const RegistrationOutputs& outputs, const FireModel& model) {
  return {discriminator_loss(outputs, model), generator_adversarial_loss(outputs, model)};
}

Tensor similarity_loss(const RegistrationOutputs& outputs) {
  const Tensor warped_synth_b = apply_warp(outputs.synth_b, outputs.phi_ab);
  const Tensor warped_synth_a = apply_warp(outputs.synth_a, outputs.phi_ba);
  return add(l1_between(warped_synth_b, outputs.input_b), l1_between(warped_synth_a, outputs.input_a));
}

Tensor inverse_consistency_loss(const RegistrationOutputs& outputs) {
  const Tensor fwd = compose(outputs.phi_ab, outputs.phi_ba).grid;
  const Tensor bwd = compose(outputs.phi_ba, outputs.phi_ab).grid;
  return add(mean_vector_norm_sq(fwd), mean_vector_norm_sq(bwd));
}

Tensor smoothness_loss(const RegistrationOutputs& outputs) {
  return add(smoothness_penalty(outputs.phi_ab.dense.grid), smoothness_penalty(outputs.phi_ba.dense.grid));
}

Tensor latent_consistency_loss(const RegistrationOutputs& outputs, const FireModel& model) {
  const Tensor target_a = outputs.latent_a.detach();
  const Tensor target_b = outputs.latent_b.detach();
  const Tensor re_b = encode(model, outputs.synth_b);
  const Tensor re_a = encode(model, outputs.synth_a);
  return add(l1_between(re_b, target_a), l1_between(re_a, target_b));
}

StepReport train_step(FireModel& model, Optimizer& opt, const Tensor& xa, const Tensor& xb,
                      const LossWeights& weights) {
  StepReport report;

  // phase 1: critics, generator frozen (forward pass untracked)
  {
    const RegistrationOutputs outs = forward_pass(model, xa, xb);
    Tape tape;
    const Tensor loss_d = discriminator_loss(outs, model);
    check_loss_finite(loss_d, "adv_D");
    report.adv_d = loss_d.item();
    tape.backward(scale(loss_d, weights.adv));
    opt.discriminator.step();
    opt.discriminator.zero_grad();
    opt.generator.zero_grad();
  }

  // phase 2: generator, synthesis and transform nets, critics frozen
  {
    Tape tape;
    const RegistrationOutputs outs = forward_pass(model, xa, xb);
    const Tensor adv_g = generator_adversarial_loss(outs, model);
    const Tensor sim = similarity_loss(outs);
    const Tensor inv = inverse_consistency_loss(outs);
    const Tensor smooth = smoothness_loss(outs);
    const Tensor latent = latent_consistency_loss(outs, model);
    check_loss_finite(adv_g, "adv_G");
    check_loss_finite(sim, "sim");
    check_loss_finite(inv, "inv");
    check_loss_finite(smooth, "smooth");
    check_loss_finite(latent, "latent");
    report.adv_g = adv_g.item();
    report.sim = sim.item();
    report.inv = inv.item();
    report.smooth = smooth.item();
    report.latent = latent.item();

    Tensor total = scale(adv_g, weights.adv);
    total = add(total, scale(sim, weights.sim));
    total = add(total, scale(inv, weights.inv));
    total = add(total, scale(smooth, weights.smooth));
    total = add(total, scale(latent, weights.latent));
    tape.backward(total);
    opt.generator.step();
    opt.generator.zero_grad();
    opt.discriminator.zero_grad();
  }

  for (const Parameter* p : model.parameters())
    if (!p->tensor.all_finite())
      throw std::runtime_error("train: parameter " + p->name + " became non-finite");
  return report;
}

TrainingLog fit(FireModel& model, Optimizer& opt, const PairDataset& dataset, const TrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("fit: empty dataset");
  TrainingLog log;
  log.reserve(static_cast<size_t>(config.steps));
  Rng root(config.seed);
  for (int step = 1; step <= config.steps; ++step) {
    Rng rng = root.substream(static_cast<uint64_t>(step));
    std::vector<Tensor> batch_a, batch_b;
    for (int k = 0; k < config.batch; ++k) {
      const auto& pair = dataset[static_cast<size_t>(rng.uniform_int(static_cast<int>(dataset.size())))];
      const Shape spatial = pair.first.spatial_shape();
      const FactorisedWarp wa =
          random_factorised_warp(rng, model.dim, spatial, config.warp_lo, config.warp_hi);
      const FactorisedWarp wb =
          random_factorised_warp(rng, model.dim, spatial, config.warp_lo, config.warp_hi);
      batch_a.push_back(apply_warp(pair.first, wa));
      batch_b.push_back(apply_warp(pair.second, wb));
    }
    Tensor xa = batch_a[0], xb = batch_b[0];
    if (config.batch > 1) {
      Shape s = batch_a[0].shape();
      s[0] = config.batch;
      xa = Tensor(s);
      xb = Tensor(s);
      const int64_t vol = batch_a[0].numel();
      for (int k = 0; k < config.batch; ++k) {
        std::copy(batch_a[k].data(), batch_a[k].data() + vol, xa.data() + k * vol);
        std::copy(batch_b[k].data(), batch_b[k].data() + vol, xb.data() + k * vol);
      }
    }
    StepReport report = train_step(model, opt, xa, xb, config.weights);
    report.step = step;
    log.push_back(report);
  }
  return log;
}

// ---------------------------------------------------------------------------
// config / checkpoint serialization

namespace {

json weights_to_json(const LossWeights& w) {
  return json{{"adv", w.adv}, {"sim", w.sim}, {"inv", w.inv}, {"smooth", w.smooth}, {"latent", w.latent}};
}

LossWeights weights_from_json(const json& j) {
  LossWeights w;
  w.adv = j.at("adv").get<float>();
  w.sim = j.at("sim").get<float>();
  w.inv = j.at("inv").get<float>();
  w.smooth = j.at("smooth").get<float>();
  w.latent = j.at("latent").get<float>();
  return w;
}

json config_to_json(const TrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch", c.batch},
              {"learn_rate", c.learn_rate},
              {"seed", c.seed},
              {"warp_magnitude", {c.warp_lo, c.warp_hi}},
              {"image_size", c.image_size},
              {"weights", weights_to_json(c.weights)}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.batch = j.at("batch").get<int>();
  c.learn_rate = j.at("learn_rate").get<float>();
  c.seed = j.at("seed").get<uint64_t>();
  const auto& m = j.at("warp_magnitude");
  c.warp_lo = m.at(0).get<double>();
  c.warp_hi = m.at(1).get<double>();
  c.image_size = j.at("image_size").get<int>();
  c.weights = weights_from_json(j.at("weights"));
  if (c.steps < 0 || c.batch < 1 || c.warp_lo < 0 || c.warp_hi < c.warp_lo)
    throw std::runtime_error("train config: invalid steps/batch/warp_magnitude");
  return c;
}

}  // namespace

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("train config: cannot open " + path);
  json j;
  try {
    in >> j;
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw std::runtime_error("train config: " + path + ": " + e.what());
  }
}

void save_train_config(const TrainConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("train config: cannot write " + path);
  out << config_to_json(config).dump(2) << "\n";
}

void save_checkpoint(FireModel& model, Optimizer& opt, const TrainConfig& config, int step,
                     const std::string& dir) {
  fs::create_directories(fs::path(dir) / "params");
  json manifest;
  manifest["format"] = "fire-checkpoint";
  manifest["version"] = 1;
  manifest["dim"] = model.dim;
  manifest["step"] = step;
  manifest["config"] = config_to_json(config);
  json params = json::array();
  for (Parameter* p : model.parameters()) {
    const std::string file = "params/" + p->name + ".npy";
    write_npy(p->tensor, (fs::path(dir) / file).string());
    params.push_back({{"name", p->name}, {"shape", p->tensor.shape()}, {"file", file}});
  }
  manifest["parameters"] = params;
  auto dump_moments = [&](Adam& adam) {
    for (Parameter* p : adam.params()) {
      const Shape& s = p->tensor.shape();
      write_npy(Tensor(s, adam.moment_m(p->name)), (fs::path(dir) / ("params/" + p->name + ".m.npy")).string());
      write_npy(Tensor(s, adam.moment_v(p->name)), (fs::path(dir) / ("params/" + p->name + ".v.npy")).string());
    }
  };
  dump_moments(opt.generator);
  dump_moments(opt.discriminator);
  manifest["optimizer"] = {{"type", "adam"},
                           {"lr", opt.generator.lr()},
                           {"t_gen", opt.generator.steps_taken()},
                           {"t_disc", opt.discriminator.steps_taken()}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + manifest_path.string());
  json manifest;
  Checkpoint ckpt;
  try {
    in >> manifest;
    if (manifest.at("format").get<std::string>() != "fire-checkpoint")
      throw std::runtime_error("checkpoint: manifest field 'format' is not fire-checkpoint");
    ckpt.version = manifest.at("version").get<int>();
    if (ckpt.version != 1)
      throw std::runtime_error("checkpoint: unsupported manifest version " + std::to_string(ckpt.version));
    ckpt.dim = manifest.at("dim").get<int>();
    ckpt.step = manifest.at("step").get<int>();
    ckpt.config = config_from_json(manifest.at("config"));
    for (const auto& entry : manifest.at("parameters")) {
      const std::string name = entry.at("name").get<std::string>();
      const std::string file = entry.at("file").get<std::string>();
      Tensor t = read_npy((fs::path(dir) / file).string());
      const Shape declared = entry.at("shape").get<Shape>();
      if (t.shape() != declared)
        throw std::runtime_error("checkpoint: parameter " + name + " file shape " + shape_str(t.shape()) +
                                 " disagrees with manifest " + shape_str(declared));
      ckpt.params.emplace_back(name, t);
      const fs::path mfile = fs::path(dir) / ("params/" + name + ".m.npy");
      const fs::path vfile = fs::path(dir) / ("params/" + name + ".v.npy");
      if (fs::exists(mfile) && fs::exists(vfile))
        ckpt.moments[name] = {read_npy(mfile.string()), read_npy(vfile.string())};
    }
    const auto& optj = manifest.at("optimizer");
    ckpt.t_gen = optj.at("t_gen").get<int64_t>();
    ckpt.t_disc = optj.at("t_disc").get<int64_t>();
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return ckpt;
}

void restore_model(FireModel& model, const Checkpoint& ckpt) {
  for (Parameter* p : model.parameters()) {
    const Tensor* found = nullptr;
    for (const auto& [name, t] : ckpt.params)
      if (name == p->name) {
        found = &t;
        break;
      }
    if (!found) throw std::runtime_error("checkpoint: missing parameter " + p->name);
    if (found->shape() != p->tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name + ": model expects " +
                               shape_str(p->tensor.shape()) + ", checkpoint has " +
                               shape_str(found->shape()));
  }
  for (Parameter* p : model.parameters()) {
    for (const auto& [name, t] : ckpt.params)
      if (name == p->name) {
        std::copy(t.data(), t.data() + t.numel(), p->tensor.data());
        break;
      }
  }
}

void restore_optimizer(Optimizer& opt, const Checkpoint& ckpt) {
  auto restore = [&](Adam& adam) {
    for (Parameter* p : adam.params()) {
      auto it = ckpt.moments.find(p->name);
      if (it == ckpt.moments.end()) continue;
      const auto& [m, v] = it->second;
      if (m.numel() != p->tensor.numel())
        throw std::runtime_error("checkpoint: optimizer moment shape mismatch for " + p->name);
      std::copy(m.data(), m.data() + m.numel(), adam.moment_m(p->name).data());
      std::copy(v.data(), v.data() + v.numel(), adam.moment_v(p->name).data());
    }
  };
  restore(opt.generator);
  restore(opt.discriminator);
  opt.generator.set_steps_taken(ckpt.t_gen);
  opt.discriminator.set_steps_taken(ckpt.t_disc);
}

FireModel model_from_checkpoint(const Checkpoint& ckpt) {
  FireModel model = FireModel::create(ckpt.dim, /*seed=*/0);
  restore_model(model, ckpt);
  return model;
}

void write_loss_csv(const TrainingLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("loss log: cannot write " + path);
  out << "step,adv_D,adv_G,sim,inv,smooth,latent\n";
  std::ostringstream line;
  for (const StepReport& r : log) {
    line.str("");
    line << r.step << "," << r.adv_d << "," << r.adv_g << "," << r.sim << "," << r.inv << "," << r.smooth
         << "," << r.latent;
    out << line.str() << "\n";
  }
}

}  // namespace fire
