#include "sst/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace sst {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace memory {
namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_cap{0};
}  // namespace

std::size_t current_bytes() { return g_current.load(); }
std::size_t peak_bytes() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_current.load()); }
void set_cap(std::size_t bytes) { g_cap.store(bytes); }
std::size_t cap() { return g_cap.load(); }

void note_alloc(std::size_t bytes) {
  const std::size_t limit = g_cap.load();
  const std::size_t now = g_current.fetch_add(bytes) + bytes;
  if (limit != 0 && now > limit) {
    g_current.fetch_sub(bytes);
    throw MemoryCapExceeded("allocation of " + std::to_string(bytes) +
                            " bytes exceeds memory cap of " + std::to_string(limit));
  }
  std::size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void note_free(std::size_t bytes) noexcept { g_current.fetch_sub(bytes); }

CapScope::CapScope(std::size_t bytes) : previous_(cap()) { set_cap(bytes); }
CapScope::~CapScope() { set_cap(previous_); }

}  // namespace memory

namespace {
thread_local bool t_checks = true;
thread_local Tape* t_tape = nullptr;
}  // namespace

bool numeric_checks_enabled() { return t_checks; }
void set_numeric_checks(bool enabled) { t_checks = enabled; }

NumericCheckScope::NumericCheckScope(bool enabled) : previous_(t_checks) { t_checks = enabled; }
NumericCheckScope::~NumericCheckScope() { t_checks = previous_; }

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->data.assign(values.begin(), values.end());
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, Buffer values) : impl_(std::make_shared<TensorImpl>()) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->data = std::move(values);
  impl_->shape = std::move(shape);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(v));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

namespace {
std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> index) {
  if (index.size() != shape.size()) throw DimensionError("index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape[axis]) throw DimensionError("index out of range");
    off = off * shape[axis] + i;
    ++axis;
  }
  return off;
}
}  // namespace

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return impl_->data[flat_index(impl_->shape, index)];
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return impl_->data[flat_index(impl_->shape, index)];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::span<double> Tensor::grad_mut() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  if (impl_->grad.empty()) return Tensor(impl_->shape, 0.0);
  return Tensor(impl_->shape, impl_->grad);
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::release_grad() { Buffer().swap(impl_->grad); }

void Tensor::accumulate_grad(std::span<const double> g) const {
  if (g.size() != impl_->data.size()) throw DimensionError("gradient size mismatch");
  if (impl_->grad.empty()) {
    impl_->grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

void Tape::record(std::string op, std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> backward) {
  output.impl()->requires_grad = true;
  output.impl()->is_leaf = false;
  entries_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1 || loss.rank() != 0) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  std::size_t end = entries_.size();
  while (end > 0 && !entries_[end - 1].output.same_storage(loss)) --end;
  if (end == 0) {
    if (loss.requires_grad() && loss.is_leaf()) {
      Tensor(loss).accumulate_grad(std::vector<double>{1.0});
      return;
    }
    throw ContractError("loss is not recorded on this tape");
  }
  for (std::size_t i = 0; i < end; ++i) entries_[i].output.release_grad();
  Tensor(loss).accumulate_grad(std::vector<double>{1.0});
  for (std::size_t i = end; i-- > 0;) {
    auto& e = entries_[i];
    if (!e.output.has_grad()) continue;
    e.backward();
  }
}

void Tape::clear() { entries_.clear(); }

Tape* active_tape() { return t_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(t_tape) { t_tape = &tape; }
TapeScope::~TapeScope() { t_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_tape) { t_tape = nullptr; }
NoGradScope::~NoGradScope() { t_tape = previous_; }

bool should_record(std::span<const Tensor> inputs) {
  if (t_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

}  // namespace sst
