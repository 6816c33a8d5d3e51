#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

namespace fire {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until backward (or grad()) touches it
  bool requires_grad = false;
  uint64_t tape_id = 0;  // nonzero when produced by a recorded op
};

// Dense row-major float32 tensor. Tensor is a handle: copies share storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float v);
  static Tensor zeros_like(const Tensor& t);

  bool defined() const { return impl != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int rank() const;
  int64_t dim(int i) const;
  int spatial_rank() const { return rank() - 2; }  // [B, C, spatial...]
  Shape spatial_shape() const;

  float* data();
  const float* data() const;
  float item() const;  // numel() == 1 only

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  float* grad();              // allocates a zero-filled store on first use
  const float* grad() const;  // nullptr when absent
  void zero_grad();
  Tensor grad_tensor() const;  // copy of the gradient as a plain tensor

  Tensor detach() const;  // same values, no graph link
  Tensor clone() const;   // deep copy of values

  bool all_finite() const;
  void check_finite(const char* what) const;  // throws on NaN/Inf

  std::shared_ptr<TensorImpl> impl;
};

// Recorded reverse-mode graph. Constructing a Tape pushes it as the active
// recording target for this thread; destruction pops it. Ops record onto the
// innermost active tape; with no tape active they run forward-only.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Called by ops after the forward result is materialized. backward_fn reads
  // the output grad and accumulates into the input grads.
  void record(const char* kind, std::vector<Tensor> inputs, const Tensor& output,
              std::function<void()> backward_fn);

  // Populates grads of every tracked tensor reachable from root. Gradients
  // accumulate additively across uses. One backward per recorded pass.
  void backward(const Tensor& root);

  bool consumed() const { return consumed_; }
  size_t size() const { return nodes_.size(); }
  uint64_t id() const { return id_; }

 private:
  struct Node {
    const char* kind;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const TensorImpl*> produced_;
  uint64_t id_;
  bool consumed_ = false;
};

// Suspends recording on the active tape for the guard's lifetime.
struct TapePause {
  TapePause();
  ~TapePause();
  TapePause(const TapePause&) = delete;
  TapePause& operator=(const TapePause&) = delete;
};

// True when a tensor participates in gradient flow (leaf with requires_grad,
// or an intermediate produced on some tape).
inline bool tracks_grad(const Tensor& t) {
  return t.defined() && (t.impl->requires_grad || t.impl->tape_id != 0);
}

// Ensures the grad buffer exists and returns it.
float* grad_buffer(TensorImpl* impl);

struct Parameter {
  std::string name;
  Tensor tensor;  // requires_grad = true
};

}  // namespace fire
