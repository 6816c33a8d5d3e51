#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fire/io.hpp"
#include "fire/warp.hpp"

namespace fire {

namespace {

constexpr double kBackground = 0.15;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// structure names follow the annotation trio used by the evaluation protocol
std::string structure_name(int index) {
  switch (index) {
    case 1:
      return "WHM";
    case 2:
      return "BS";
    case 3:
      return "Ce";
    default:
      return "S" + std::to_string(index);
  }
}

std::vector<float> smooth_noise(Rng& rng, const Shape& spatial, double sigma) {
  std::vector<float> noise(static_cast<size_t>(shape_numel(spatial)));
  for (auto& v : noise) v = static_cast<float>(rng.normal());
  gaussian_smooth(noise, spatial, sigma);
  return noise;
}

}  // namespace

PhantomPair gen_phantom_pair(Rng& rng, int size, int complexity) {
  if (size < 8 || size % 8 != 0)
    throw std::invalid_argument("gen_phantom_pair: size must be a positive multiple of 8");
  if (complexity < 1) throw std::invalid_argument("gen_phantom_pair: complexity must be >= 1");

  const Shape spatial{size, size};
  const int64_t vol = int64_t(size) * size;
  std::vector<double> anatomy(static_cast<size_t>(vol), kBackground);
  std::vector<int> labels(static_cast<size_t>(vol), 0);
  std::vector<std::vector<double>> masks;

  const double intensity_cycle[] = {0.85, 0.45, 0.65, 0.95, 0.35, 0.55, 0.75};
  double major_cy = 0.0, major_cx = 0.0, major_r = 0.0;
  for (int blob = 1; blob <= complexity; ++blob) {
    // first blob is the dominant structure, the rest are smaller satellites
    // kept off it so no structure swallows another's voxels
    const bool major = blob == 1;
    const double ra = size * (major ? rng.uniform(0.20, 0.28) : rng.uniform(0.07, 0.13));
    const double rb = size * (major ? rng.uniform(0.20, 0.28) : rng.uniform(0.07, 0.13));
    double cy, cx;
    for (int attempt = 0;; ++attempt) {
      cy = size * (major ? rng.uniform(0.38, 0.62) : rng.uniform(0.18, 0.82));
      cx = size * (major ? rng.uniform(0.38, 0.62) : rng.uniform(0.18, 0.82));
      if (major || attempt > 200) break;
      const double d = std::hypot(cy - major_cy, cx - major_cx);
      if (d > major_r + std::max(ra, rb)) break;
    }
    if (major) {
      major_cy = cy;
      major_cx = cx;
      major_r = std::max(ra, rb);
    }
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    const double level =
        intensity_cycle[(blob - 1) % 7] + rng.uniform(-0.04, 0.04);
    const double ct = std::cos(theta), st = std::sin(theta);

    std::vector<double> mask(static_cast<size_t>(vol));
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        const double dy = double(y) - cy, dx = double(x) - cx;
        const double u = ct * dy - st * dx;
        const double v = st * dy + ct * dx;
        const double rho = std::sqrt((u / ra) * (u / ra) + (v / rb) * (v / rb));
        const double m = sigmoid((1.0 - rho) * 12.0);
        const size_t at = static_cast<size_t>(y * size + x);
        mask[at] = m;
        anatomy[at] = anatomy[at] * (1.0 - m) + level * m;
        if (m > 0.5) labels[at] = blob;
      }
    }
    masks.push_back(std::move(mask));
  }

  // modality A: anatomy with fine texture
  const std::vector<float> tex_a = smooth_noise(rng, spatial, 1.0);
  Tensor image_a(Shape{1, 1, size, size});
  for (int64_t i = 0; i < vol; ++i) {
    const double v = std::clamp(anatomy[static_cast<size_t>(i)] + 0.06 * tex_a[static_cast<size_t>(i)], 0.0, 1.0);
    image_a.data()[i] = static_cast<float>(2.0 * v - 1.0);
  }

  // modality B: monotone nonlinear remap, one satellite structure's contrast
  // pulled toward the remapped background
  const int suppressed = complexity >= 2 ? 2 + rng.uniform_int(complexity - 1) : 0;
  const double remapped_bg = std::pow(kBackground, 0.45);
  const std::vector<float> tex_b = smooth_noise(rng, spatial, 2.0);
  Tensor image_b(Shape{1, 1, size, size});
  for (int64_t i = 0; i < vol; ++i) {
    double v = std::pow(std::clamp(anatomy[static_cast<size_t>(i)], 0.0, 1.0), 0.45);
    if (suppressed > 0) {
      const double m = masks[static_cast<size_t>(suppressed - 1)][static_cast<size_t>(i)];
      v = v * (1.0 - 0.85 * m) + 0.85 * m * remapped_bg;
    }
    v = std::clamp(v + 0.04 * tex_b[static_cast<size_t>(i)], 0.0, 1.0);
    image_b.data()[i] = static_cast<float>(2.0 * v - 1.0);
  }

  PhantomPair pair;
  pair.a = VolumeRecord{image_a, {1.0, 1.0}, 'A', std::nullopt};
  pair.b = VolumeRecord{image_b, {1.0, 1.0}, 'B', std::nullopt};
  pair.labels.spatial = spatial;
  pair.labels.labels = std::move(labels);
  for (int blob = 1; blob <= complexity; ++blob) pair.labels.legend[blob] = structure_name(blob);
  return pair;
}

}  // namespace fire
