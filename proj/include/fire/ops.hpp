#pragma once

#include <functional>

#include "fire/tensor.hpp"

namespace fire {

enum class Act { relu, leaky_relu, sigmoid, tanh };
enum class Reduce { sum, mean, l1, sumsq };

// Differentiable tensor ops. Layout is [B, C, spatial...] with spatial rank 2
// or 3. Each op records its backward rule on the active tape.

// Cross-correlation with per-channel bias. Output extent per spatial dim is
// floor((s + 2*padding - k)/stride) + 1.
Tensor conv(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
            int padding = 0);

// Bilinear/trilinear upsampling by an integer factor, align-corners-false.
Tensor upsample_linear(const Tensor& input, int factor);

// input[B,F] * weight[O,F]^T + bias[O]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor activation(const Tensor& input, Act kind, float alpha = 0.2f);

// Per (batch, channel) normalization over spatial values.
Tensor instance_norm(const Tensor& input, float eps = 1e-5f);

// Scalar reductions: sum, mean, l1 = mean of |x|, sumsq = sum of squares.
Tensor reduce(const Tensor& input, Reduce kind);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor reshape(const Tensor& input, Shape shape);  // same element count
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor spatial_mean(const Tensor& input);  // [B,C,spatial...] -> [B,C]

// Mean squared forward difference of a field over every spatial axis.
Tensor smoothness_penalty(const Tensor& field);

// Gradient-check oracle: compares taped gradients of a scalar closure against
// central finite differences (f(x+h) - f(x-h)) / 2h, element by element.
// Returns the max of |analytic - fd| / max(|analytic|, |fd|, 0.01); the 0.01
// floor makes the usual 1e-3 relative tolerance act as a 1e-5 absolute
// tolerance where the gradient vanishes.
double finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& op,
                         std::vector<Tensor> inputs, double step);

}  // namespace fire
