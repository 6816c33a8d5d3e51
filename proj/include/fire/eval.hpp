#pragma once

#include <map>
#include <string>
#include <vector>

#include "fire/nets.hpp"
#include "fire/rng.hpp"
#include "fire/warp.hpp"

namespace fire {

// Integer segmentation grid paired with an image; label 0 is background.
struct LabelVolume {
  Shape spatial;
  std::vector<int> labels;
  std::map<int, std::string> legend;

  int64_t numel() const { return static_cast<int64_t>(labels.size()); }
  int64_t count(int label) const;
};

// 2|A∩B| / (|A|+|B|); two empty masks agree perfectly (1.0).
double dice(const LabelVolume& a, const LabelVolume& b, int label);

// Nearest-neighbor resampling through the warp's total coordinate map.
LabelVolume warp_labels(const LabelVolume& labels, const FactorisedWarp& w);

struct ConsistencyStats {
  double mean = 0.0;
  double max = 0.0;  // voxels
};

// Residual norms of both compositions, interior voxels only.
ConsistencyStats inverse_consistency_error(const FactorisedWarp& phi_f, const FactorisedWarp& phi_b);

// Fraction of interior voxels with nonpositive Jacobian determinant.
double folding_fraction(const FactorisedWarp& w);

struct EvalRepeat {
  std::map<int, double> dice_before, dice_after;
  double consistency_mean = 0.0, consistency_max = 0.0, folding = 0.0;
};

struct EvalReport {
  std::map<int, std::string> legend;
  std::map<int, double> dice_before, dice_after;  // means over repeats
  double consistency_mean = 0.0, consistency_max = 0.0, folding = 0.0;
  std::vector<EvalRepeat> repeats;

  std::string to_json() const;
};

struct EvalPair {
  Tensor xa, xb;  // co-registered
  LabelVolume labels;
};

// Per repeat: perturb the moving image and its labels with a random warp of
// the given magnitude, register against the fixed image, propagate labels
// through the predicted field, and score Dice/consistency/folding.
EvalReport run_registration_experiment(const FireModel& model, const EvalPair& pair, int repeats,
                                       double lo, double hi, uint64_t seed);

// Element-wise mean of several reports' aggregates (multi-pair evaluation).
EvalReport merge_reports(const std::vector<EvalReport>& reports);

}  // namespace fire
