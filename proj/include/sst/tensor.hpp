#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sst/error.hpp"

namespace sst {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Allocation accounting. Every tensor payload, gradient and saved backward
// buffer goes through TrackingAllocator, so current/peak reflect bytes held
// by live tensors rather than process RSS.
namespace memory {

std::size_t current_bytes();
std::size_t peak_bytes();
void reset_peak();
/// 0 disables the cap. Allocations that would push current usage above the
/// cap throw MemoryCapExceeded.
void set_cap(std::size_t bytes);
std::size_t cap();

void note_alloc(std::size_t bytes);
void note_free(std::size_t bytes) noexcept;

/// Restores the previous cap on destruction.
class CapScope {
 public:
  explicit CapScope(std::size_t bytes);
  ~CapScope();
  CapScope(const CapScope&) = delete;
  CapScope& operator=(const CapScope&) = delete;

 private:
  std::size_t previous_;
};

}  // namespace memory

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    memory::note_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    memory::note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, TrackingAllocator<double>>;

// Non-finite checks on primitive outputs. Enabled by default; each thread
// carries its own flag.
bool numeric_checks_enabled();
void set_numeric_checks(bool enabled);

class NumericCheckScope {
 public:
  explicit NumericCheckScope(bool enabled);
  ~NumericCheckScope();
  NumericCheckScope(const NumericCheckScope&) = delete;
  NumericCheckScope& operator=(const NumericCheckScope&) = delete;

 private:
  bool previous_;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Shared handle to a dense row-major float64 array. Copies share storage;
/// use clone() for a deep copy. Primitives never alias their inputs.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, Buffer values);

  static Tensor scalar(double v);
  static Tensor from(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);
  std::vector<double> to_vector() const { return {impl_->data.begin(), impl_->data.end()}; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> grad_mut();
  Tensor grad_tensor() const;
  void zero_grad();
  void release_grad();
  /// Adds g into the gradient accumulator, allocating it on first use.
  void accumulate_grad(std::span<const double> g) const;

  Tensor clone() const;
  Tensor detach() const;  // deep copy without grad tracking

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// One recorded primitive application.
struct TapeEntry {
  std::string op;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
};

/// Ordered record of primitive applications on one thread. Entries are
/// appended in execution order, so inputs always precede their consumers.
class Tape {
 public:
  void record(std::string op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);
  /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls;
  /// intermediate gradients are reset at the start of every sweep.
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return entries_.size(); }
  const std::vector<TapeEntry>& entries() const { return entries_; }

 private:
  std::vector<TapeEntry> entries_;
};

Tape* active_tape();

/// Makes `tape` the active tape of the current thread for the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the scope (inference, oracles).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Helper for primitives: true when recording is active and any input needs grad.
bool should_record(std::span<const Tensor> inputs);

}  // namespace sst
