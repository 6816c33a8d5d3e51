#include "fire/cli.hpp"

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "fire/eval.hpp"
#include "fire/io.hpp"
#include "fire/train.hpp"
#include "fire/xai.hpp"

namespace fs = std::filesystem;

namespace fire {

namespace {

Tensor load_image(const std::string& path) {
  Tensor t = read_npy(path);
  if (t.rank() == 2 || t.rank() == 3) {  // bare spatial grid
    Shape s{1, 1};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    return reshape(t, s);
  }
  if (t.rank() == 4 || t.rank() == 5) return t;
  throw std::runtime_error("image " + path + ": unsupported rank " + std::to_string(t.rank()));
}

int cmd_gen_data(const std::string& out_dir, int pairs, int size, int seed, int complexity,
                 const std::string& split_arg) {
  int train = 0, val = 0, test = 0;
  if (split_arg.empty()) {
    // paper-style 8:1:3 subject proportions
    val = std::max(1, static_cast<int>(std::lround(pairs / 12.0)));
    test = std::max(1, static_cast<int>(std::lround(pairs * 3 / 12.0)));
    train = pairs - val - test;
    if (train < 1) throw std::runtime_error("gen-data: too few pairs to split");
  } else {
    if (std::sscanf(split_arg.c_str(), "%d,%d,%d", &train, &val, &test) != 3)
      throw std::runtime_error("gen-data: --split expects train,val,test");
  }
  const DatasetManifest m = write_phantom_dataset(out_dir, pairs, size, complexity, train, val, test,
                                                  static_cast<uint64_t>(seed));
  std::cout << "wrote " << m.pairs.size() << " pairs (" << train << "/" << val << "/" << test << ") to "
            << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& out_dir) {
  const TrainConfig config = load_train_config(config_path);
  const DatasetManifest manifest = load_manifest((fs::path(data_dir) / "manifest.json").string());
  const std::vector<LoadedPair> loaded = load_split(data_dir, manifest, "train");
  if (loaded.empty()) throw std::runtime_error("train: no train split in " + data_dir);

  PairDataset dataset;
  for (const LoadedPair& p : loaded) dataset.emplace_back(p.xa, p.xb);
  const int dim = loaded.front().xa.spatial_rank();

  FireModel model = FireModel::create(dim, config.seed);
  Optimizer opt = Optimizer::create(model, config.learn_rate);
  const TrainingLog log = fit(model, opt, dataset, config);

  fs::create_directories(out_dir);
  write_loss_csv(log, (fs::path(out_dir) / "loss.csv").string());
  save_checkpoint(model, opt, config, config.steps, (fs::path(out_dir) / "checkpoint").string());
  std::cout << "trained " << config.steps << " steps on " << dataset.size() << " pairs; checkpoint in "
            << out_dir << "\n";
  return 0;
}

int cmd_register(const std::string& ckpt_dir, const std::string& moving_path,
                 const std::string& fixed_path, const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  const FireModel model = model_from_checkpoint(ckpt);
  const Tensor moving = load_image(moving_path);
  const Tensor fixed = load_image(fixed_path);

  const RegistrationOutputs outs = forward_pass(model, moving, fixed);
  fs::create_directories(out_dir);
  write_npy(outs.warped_a, (fs::path(out_dir) / "warped.npy").string());
  write_npy(outs.phi_ab.affine.matrix, (fs::path(out_dir) / "affine.npy").string());
  write_npy(outs.phi_ab.dense.grid, (fs::path(out_dir) / "dense.npy").string());
  const Shape spatial = moving.spatial_shape();
  const Tensor mesh = identity_mesh(static_cast<int>(moving.dim(0)), model.dim, spatial);
  const Tensor displacement = sub(total_coordinate_map(outs.phi_ab, spatial), mesh);
  write_npy(displacement, (fs::path(out_dir) / "displacement.npy").string());
  std::cout << "registered " << moving_path << " -> " << fixed_path << "; outputs in " << out_dir << "\n";
  return 0;
}

TargetKind parse_target(const std::string& name) {
  if (name == "magnitude") return TargetKind::field_magnitude;
  if (name == "affine") return TargetKind::field_affine_part;
  if (name == "dense") return TargetKind::field_dense_part;
  if (name == "score") return TargetKind::disc_score;
  throw std::runtime_error("explain: unknown target '" + name + "'");
}

int cmd_explain(const std::string& ckpt_dir, const std::string& moving_path,
                const std::string& fixed_path, const std::string& site, const std::string& target,
                const std::string& side_arg, int seed, const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  const FireModel model = model_from_checkpoint(ckpt);
  const Tensor moving = load_image(moving_path);
  const Tensor fixed = load_image(fixed_path);
  fs::create_directories(out_dir);

  const TargetKind kind = parse_target(target.empty() ? (site == "disc" ? "score" : "magnitude") : target);

  if (site == "encoder" || site == "stn") {
    if (kind == TargetKind::disc_score)
      throw std::runtime_error("explain: target 'score' needs --site disc");
    TargetSpec spec{kind, Direction::AtoB};
    if (site == "encoder") {
      const auto [map_a, map_b] = encoder_attention(model, moving, fixed, spec);
      export_overlay(map_a, moving, (fs::path(out_dir) / "encoder_A").string());
      export_overlay(map_b, fixed, (fs::path(out_dir) / "encoder_B").string());
    } else {
      const auto [map_ab, map_ba] = stn_attention(model, moving, fixed, spec);
      export_overlay(map_ab, fixed, (fs::path(out_dir) / "stn_AtoB").string());
      export_overlay(map_ba, fixed, (fs::path(out_dir) / "stn_BtoA").string());
    }
  } else if (site == "disc") {
    if (kind != TargetKind::disc_score)
      throw std::runtime_error("explain: --site disc accepts only --target score");
    const Side side = side_arg == "A" ? Side::A : Side::B;
    const Tensor& real = side == Side::A ? moving : fixed;
    const RegistrationOutputs outs = forward_pass(model, moving, fixed);
    const Tensor& synth = side == Side::A ? outs.synth_a : outs.synth_b;
    Rng rng(static_cast<uint64_t>(seed));
    const DiscriminatorAttention maps = discriminator_attention(model, real, synth, side, rng);
    const std::string prefix = std::string("disc_") + (side == Side::A ? "A" : "B");
    export_overlay(maps.real_rigid.map, maps.real_rigid.warped_input,
                   (fs::path(out_dir) / (prefix + "_real_rigid")).string());
    export_overlay(maps.real_nonrigid.map, maps.real_nonrigid.warped_input,
                   (fs::path(out_dir) / (prefix + "_real_nonrigid")).string());
    export_overlay(maps.synth_rigid.map, maps.synth_rigid.warped_input,
                   (fs::path(out_dir) / (prefix + "_synth_rigid")).string());
    export_overlay(maps.synth_nonrigid.map, maps.synth_nonrigid.warped_input,
                   (fs::path(out_dir) / (prefix + "_synth_nonrigid")).string());
  } else {
    throw std::runtime_error("explain: unknown site '" + site + "'");
  }
  std::cout << "attention maps written to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_dir, const std::string& data_dir, int repeats, double lo, double hi,
             int seed, const std::string& out_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  const FireModel model = model_from_checkpoint(ckpt);
  const DatasetManifest manifest = load_manifest((fs::path(data_dir) / "manifest.json").string());
  const std::vector<LoadedPair> pairs = load_split(data_dir, manifest, "test");
  if (pairs.empty()) throw std::runtime_error("eval: no test split in " + data_dir);

  std::vector<EvalReport> reports;
  for (const LoadedPair& p : pairs) {
    EvalPair pair{p.xa, p.xb, p.labels};
    reports.push_back(run_registration_experiment(model, pair, repeats, lo, hi,
                                                  static_cast<uint64_t>(seed) + uint64_t(p.id)));
  }
  const EvalReport merged = merge_reports(reports);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("eval: cannot write " + out_path);
  out << merged.to_json() << "\n";
  std::cout << "evaluated " << pairs.size() << " pairs x " << repeats << " repeats; report in " << out_path
            << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"FIRE multimodal registration with Grad-CAM explanations"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic bimodal phantom dataset");
  std::string gen_out;
  int gen_pairs = 12, gen_size = 64, gen_seed = 1, gen_complexity = 3;
  std::string gen_split;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--pairs", gen_pairs, "number of pairs");
  gen->add_option("--size", gen_size, "image size (multiple of 8)");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--complexity", gen_complexity, "number of structures per phantom");
  gen->add_option("--split", gen_split, "train,val,test counts (default 8:1:3 proportions)");

  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  std::string train_data, train_config, train_out;
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--config", train_config, "train config JSON")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();

  auto* reg = app.add_subcommand("register", "register a moving image to a fixed image");
  std::string reg_ckpt, reg_moving, reg_fixed, reg_out;
  reg->add_option("--ckpt", reg_ckpt, "checkpoint directory")->required();
  reg->add_option("--moving", reg_moving, "moving image NPY")->required();
  reg->add_option("--fixed", reg_fixed, "fixed image NPY")->required();
  reg->add_option("--out", reg_out, "output directory")->required();

  auto* explain = app.add_subcommand("explain", "write Grad-CAM attention maps");
  std::string ex_ckpt, ex_moving, ex_fixed, ex_site, ex_target, ex_side = "B", ex_out;
  int ex_seed = 1;
  explain->add_option("--ckpt", ex_ckpt, "checkpoint directory")->required();
  explain->add_option("--moving", ex_moving, "moving image NPY")->required();
  explain->add_option("--fixed", ex_fixed, "fixed image NPY")->required();
  explain->add_option("--site", ex_site, "encoder | stn | disc")->required();
  explain->add_option("--target", ex_target, "magnitude | affine | dense | score");
  explain->add_option("--side", ex_side, "A | B (disc site)");
  explain->add_option("--seed", ex_seed, "rng seed for disc perturbation variants");
  explain->add_option("--out", ex_out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "run the repeated-registration evaluation");
  std::string ev_ckpt, ev_data, ev_out = "report.json";
  int ev_repeats = 20, ev_seed = 1;
  double ev_lo = 0.2, ev_hi = 0.5;
  eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
  eval_cmd->add_option("--repeats", ev_repeats, "random transforms per test pair");
  eval_cmd->add_option("--lo", ev_lo, "perturbation magnitude lower bound");
  eval_cmd->add_option("--hi", ev_hi, "perturbation magnitude upper bound");
  eval_cmd->add_option("--seed", ev_seed, "rng seed");
  eval_cmd->add_option("--out", ev_out, "report JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_pairs, gen_size, gen_seed, gen_complexity, gen_split);
    if (train_cmd->parsed()) return cmd_train(train_data, train_config, train_out);
    if (reg->parsed()) return cmd_register(reg_ckpt, reg_moving, reg_fixed, reg_out);
    if (explain->parsed())
      return cmd_explain(ex_ckpt, ex_moving, ex_fixed, ex_site, ex_target, ex_side, ex_seed, ex_out);
    if (eval_cmd->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_repeats, ev_lo, ev_hi, ev_seed, ev_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace fire
