#include "fire/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace fire {

int64_t LabelVolume::count(int label) const {
  return std::count(labels.begin(), labels.end(), label);
}

double dice(const LabelVolume& a, const LabelVolume& b, int label) {
  if (a.spatial != b.spatial)
    throw std::invalid_argument("dice: shape mismatch " + shape_str(a.spatial) + " vs " +
                                shape_str(b.spatial));
  if (a.legend.find(label) == a.legend.end() && b.legend.find(label) == b.legend.end())
    throw std::invalid_argument("dice: label " + std::to_string(label) + " absent from both legends");
  int64_t na = 0, nb = 0, overlap = 0;
  for (size_t i = 0; i < a.labels.size(); ++i) {
    const bool ia = a.labels[i] == label;
    const bool ib = b.labels[i] == label;
    na += ia;
    nb += ib;
    overlap += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(overlap) / double(na + nb);
}

LabelVolume warp_labels(const LabelVolume& labels, const FactorisedWarp& w) {
  if (labels.spatial != w.dense.spatial())
    throw std::invalid_argument("warp_labels: labels " + shape_str(labels.spatial) + " vs field " +
                                shape_str(w.dense.spatial()));
  TapePause pause;
  const int dim = w.dim();
  const Tensor total = total_coordinate_map(w, labels.spatial);
  const int64_t vol = labels.numel();

  LabelVolume out;
  out.spatial = labels.spatial;
  out.legend = labels.legend;
  out.labels.assign(static_cast<size_t>(vol), 0);

  std::vector<int64_t> stride(static_cast<size_t>(dim));
  int64_t acc = 1;
  for (int d = dim - 1; d >= 0; --d) {
    stride[static_cast<size_t>(d)] = acc;
    acc *= labels.spatial[static_cast<size_t>(d)];
  }
  for (int64_t pos = 0; pos < vol; ++pos) {
    int64_t src = 0;
    for (int d = 0; d < dim; ++d) {
      const int64_t extent = labels.spatial[static_cast<size_t>(d)];
      const double coord = total.data()[int64_t(d) * vol + pos];
      const double pixel = (coord + 1.0) * double(extent) / 2.0 - 0.5;
      int64_t idx = static_cast<int64_t>(std::lround(pixel));
      idx = std::min(std::max<int64_t>(idx, 0), extent - 1);
      src += idx * stride[static_cast<size_t>(d)];
    }
    out.labels[static_cast<size_t>(pos)] = labels.labels[static_cast<size_t>(src)];
  }
  return out;
}

namespace {

// iterates interior voxels (1-voxel border excluded); calls fn(flat_index)
template <typename Fn>
void for_interior(const Shape& spatial, Fn fn) {
  const int dim = static_cast<int>(spatial.size());
  std::vector<int64_t> stride(static_cast<size_t>(dim));
  int64_t acc = 1;
  for (int d = dim - 1; d >= 0; --d) {
    stride[static_cast<size_t>(d)] = acc;
    acc *= spatial[static_cast<size_t>(d)];
  }
  std::vector<int64_t> idx(static_cast<size_t>(dim), 1);
  bool done = false;
  for (int d = 0; d < dim; ++d)
    if (spatial[static_cast<size_t>(d)] < 3) done = true;  // no interior
  while (!done) {
    int64_t flat = 0;
    for (int d = 0; d < dim; ++d) flat += idx[static_cast<size_t>(d)] * stride[static_cast<size_t>(d)];
    fn(flat);
    int d = dim - 1;
    for (; d >= 0; --d) {
      if (++idx[static_cast<size_t>(d)] < spatial[static_cast<size_t>(d)] - 1) break;
      idx[static_cast<size_t>(d)] = 1;
    }
    if (d < 0) done = true;
  }
}

}  // namespace

ConsistencyStats inverse_consistency_error(const FactorisedWarp& phi_f, const FactorisedWarp& phi_b) {
  if (phi_f.dense.spatial() != phi_b.dense.spatial())
    throw std::invalid_argument("inverse_consistency_error: shape mismatch");
  TapePause pause;
  const Shape spatial = phi_f.dense.spatial();
  const int dim = phi_f.dim();
  const int64_t vol = shape_numel(spatial);
  const Tensor r1 = compose(phi_f, phi_b).grid;
  const Tensor r2 = compose(phi_b, phi_f).grid;

  double sum = 0.0, maxv = 0.0;
  int64_t n = 0;
  for (const Tensor* r : {&r1, &r2}) {
    const int64_t batch = r->dim(0);
    for (int64_t b = 0; b < batch; ++b) {
      for_interior(spatial, [&](int64_t flat) {
        double nsq = 0.0;
        for (int d = 0; d < dim; ++d) {
          const double vox =
              double(r->data()[(b * dim + d) * vol + flat]) * double(spatial[static_cast<size_t>(d)]) / 2.0;
          nsq += vox * vox;
        }
        const double norm = std::sqrt(nsq);
        sum += norm;
        maxv = std::max(maxv, norm);
        ++n;
      });
    }
  }
  ConsistencyStats stats;
  stats.mean = n ? sum / double(n) : 0.0;
  stats.max = maxv;
  return stats;
}

double folding_fraction(const FactorisedWarp& w) {
  const Tensor det = jacobian_determinant(w);
  const Shape spatial = w.dense.spatial();
  const int64_t vol = shape_numel(spatial);
  const int64_t batch = det.dim(0);
  int64_t folds = 0, n = 0;
  for (int64_t b = 0; b < batch; ++b) {
    for_interior(spatial, [&](int64_t flat) {
      folds += det.data()[b * vol + flat] <= 0.0f;
      ++n;
    });
  }
  return n ? double(folds) / double(n) : 0.0;
}

EvalReport run_registration_experiment(const FireModel& model, const EvalPair& pair, int repeats,
                                       double lo, double hi, uint64_t seed) {
  if (repeats < 1) throw std::invalid_argument("run_registration_experiment: repeats must be >= 1");
  EvalReport report;
  report.legend = pair.labels.legend;
  std::vector<int> structure_ids;
  for (const auto& [id, name] : pair.labels.legend)
    if (id != 0) structure_ids.push_back(id);

  Rng root(seed);
  const Shape spatial = pair.xa.spatial_shape();
  for (int r = 0; r < repeats; ++r) {
    Rng rng = root.substream(static_cast<uint64_t>(r));
    const FactorisedWarp perturb = random_factorised_warp(rng, model.dim, spatial, lo, hi);
    const Tensor xa_moved = apply_warp(pair.xa, perturb);
    const LabelVolume labels_moved = warp_labels(pair.labels, perturb);

    const RegistrationOutputs outs = forward_pass(model, xa_moved, pair.xb);
    const LabelVolume labels_registered = warp_labels(labels_moved, outs.phi_ab);

    EvalRepeat rep;
    for (int id : structure_ids) {
      rep.dice_before[id] = dice(labels_moved, pair.labels, id);
      rep.dice_after[id] = dice(labels_registered, pair.labels, id);
    }
    const ConsistencyStats stats = inverse_consistency_error(outs.phi_ab, outs.phi_ba);
    rep.consistency_mean = stats.mean;
    rep.consistency_max = stats.max;
    rep.folding = folding_fraction(outs.phi_ab);
    report.repeats.push_back(std::move(rep));
  }

  for (int id : structure_ids) {
    double before = 0.0, after = 0.0;
    for (const EvalRepeat& rep : report.repeats) {
      before += rep.dice_before.at(id);
      after += rep.dice_after.at(id);
    }
    report.dice_before[id] = before / double(repeats);
    report.dice_after[id] = after / double(repeats);
  }
  for (const EvalRepeat& rep : report.repeats) {
    report.consistency_mean += rep.consistency_mean;
    report.consistency_max = std::max(report.consistency_max, rep.consistency_max);
    report.folding += rep.folding;
  }
  report.consistency_mean /= double(repeats);
  report.folding /= double(repeats);
  return report;
}

EvalReport merge_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("merge_reports: no reports");
  EvalReport merged;
  merged.legend = reports.front().legend;
  for (const EvalReport& r : reports) {
    for (const auto& [id, v] : r.dice_before) merged.dice_before[id] += v / double(reports.size());
    for (const auto& [id, v] : r.dice_after) merged.dice_after[id] += v / double(reports.size());
    merged.consistency_mean += r.consistency_mean / double(reports.size());
    merged.consistency_max = std::max(merged.consistency_max, r.consistency_max);
    merged.folding += r.folding / double(reports.size());
    for (const EvalRepeat& rep : r.repeats) merged.repeats.push_back(rep);
  }
  return merged;
}

namespace {

json repeat_to_json(const EvalRepeat& rep, const std::map<int, std::string>& legend) {
  json structures;
  for (const auto& [id, before] : rep.dice_before) {
    const auto name_it = legend.find(id);
    const std::string key = name_it != legend.end() ? name_it->second : std::to_string(id);
    structures[key] = {{"dice_before", before}, {"dice_after", rep.dice_after.at(id)}};
  }
  return json{{"structures", structures},
              {"consistency", {{"mean", rep.consistency_mean}, {"max", rep.consistency_max}}},
              {"folding", rep.folding}};
}

}  // namespace

std::string EvalReport::to_json() const {
  json structures;
  for (const auto& [id, before] : dice_before) {
    const auto name_it = legend.find(id);
    const std::string key = name_it != legend.end() ? name_it->second : std::to_string(id);
    structures[key] = {{"dice_before", before}, {"dice_after", dice_after.at(id)}};
  }
  json j{{"structures", structures},
         {"consistency", {{"mean", consistency_mean}, {"max", consistency_max}}},
         {"folding", folding},
         {"repeats", json::array()}};
  for (const EvalRepeat& rep : repeats) j["repeats"].push_back(repeat_to_json(rep, legend));
  return j.dump(2);
}

}  // namespace fire
