#include "fire/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fire {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) {
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive extent in shape " + shape_str(shape));
  }
  impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(shape_numel(impl->shape)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                                shape_str(shape));
  impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
}

Tensor Tensor::scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0f); }

const Shape& Tensor::shape() const { return impl->shape; }
int64_t Tensor::numel() const { return static_cast<int64_t>(impl->data.size()); }
int Tensor::rank() const { return static_cast<int>(impl->shape.size()); }
int64_t Tensor::dim(int i) const { return impl->shape.at(static_cast<size_t>(i)); }

Shape Tensor::spatial_shape() const {
  if (rank() < 3) throw std::invalid_argument("tensor: no spatial dims in shape " + shape_str(shape()));
  return Shape(impl->shape.begin() + 2, impl->shape.end());
}

float* Tensor::data() { return impl->data.data(); }
const float* Tensor::data() const { return impl->data.data(); }

float Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar shape " + shape_str(shape()));
  return impl->data[0];
}

bool Tensor::requires_grad() const { return impl->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return defined() && !impl->grad.empty(); }

float* grad_buffer(TensorImpl* impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
  return impl->grad.data();
}

float* Tensor::grad() { return grad_buffer(impl.get()); }

const float* Tensor::grad() const { return impl->grad.empty() ? nullptr : impl->grad.data(); }

void Tensor::zero_grad() {
  if (!impl->grad.empty()) std::fill(impl->grad.begin(), impl->grad.end(), 0.0f);
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) throw std::runtime_error("tensor: gradient not populated (run backward first)");
  return Tensor(impl->shape, impl->grad);
}

Tensor Tensor::detach() const {
  Tensor out(impl->shape, impl->data);
  return out;
}

Tensor Tensor::clone() const { return Tensor(impl->shape, impl->data); }

bool Tensor::all_finite() const {
  for (float v : impl->data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::check_finite(const char* what) const {
  if (!all_finite()) throw std::runtime_error(std::string("non-finite values in ") + what);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local std::vector<Tape*> g_tape_stack;
std::atomic<uint64_t> g_tape_counter{1};
}  // namespace

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) { g_tape_stack.push_back(this); }

Tape::~Tape() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == this) g_tape_stack.pop_back();
}

Tape* Tape::active() { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

TapePause::TapePause() { g_tape_stack.push_back(nullptr); }

TapePause::~TapePause() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == nullptr) g_tape_stack.pop_back();
}

void Tape::record(const char* kind, std::vector<Tensor> inputs, const Tensor& output,
                  std::function<void()> backward_fn) {
  Node node;
  node.kind = kind;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node.inputs.push_back(t.impl);
  node.output = output.impl;
  node.backward_fn = std::move(backward_fn);
  output.impl->tape_id = id_;
  produced_.insert(output.impl.get());
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& root) {
  if (consumed_) throw std::runtime_error("tape: backward already run; re-record the forward pass first");
  if (!root.defined() || root.numel() != 1)
    throw std::invalid_argument("tape: backward root must be a scalar");
  if (produced_.find(root.impl.get()) == produced_.end())
    throw std::invalid_argument("tape: backward root was not produced by this graph");
  grad_buffer(root.impl.get())[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
  consumed_ = true;
}

}  // namespace fire
