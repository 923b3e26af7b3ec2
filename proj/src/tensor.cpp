#include "pnode/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace pnode {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : shape_{}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != data.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " holds " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_->size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  }
  return (*data_)[0];
}

std::optional<Tensor> Tensor::grad() const {
  if (!tape_) return std::nullopt;
  return tape_->gradient(node_);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor t = detach();
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(double)) == 0;
}

Tensor Tape::variable(const Tensor& value) {
  if (value.tape_) throw TapeError("variable(): tensor is already recorded on a tape");
  Tensor t = value.detach();
  t.tape_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(Node{t.shape_, {}, nullptr, {}, true});
  return t;
}

Tensor Tape::record(Tensor output, std::vector<NodeId> inputs, BackwardFn backward) {
  output.tape_ = this;
  output.node_ = nodes_.size();
  nodes_.push_back(Node{output.shape_, std::move(inputs), std::move(backward), {}, false});
  return output;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape_ == nullptr) throw TapeError("backward(): loss is not connected to a tape");
  if (loss.tape_ != this) throw TapeError("backward(): loss belongs to a different tape");
  if (!loss.is_scalar()) {
    throw TapeError("backward(): loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  if (backward_done_) throw TapeError("backward(): gradients already populated; reset first");
  backward_done_ = true;
  visited_ = 0;

  nodes_[loss.node_].grad.assign(1, 1.0);
  for (NodeId id = loss.node_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty()) continue;
    ++visited_;
    if (node.backward) {
      node.backward(*this, node.grad);
    }
    if (!node.leaf) {
      std::vector<double>().swap(node.grad);
    }
  }
}

void Tape::reset_gradients() {
  for (auto& node : nodes_) std::vector<double>().swap(node.grad);
  backward_done_ = false;
  visited_ = 0;
}

std::optional<Tensor> Tape::gradient(NodeId node) const {
  if (node >= nodes_.size()) return std::nullopt;
  const Node& n = nodes_[node];
  if (!backward_done_) return std::nullopt;
  if (n.grad.empty()) return Tensor::zeros(n.shape);
  return Tensor(n.shape, n.grad);
}

std::span<double> Tape::gradient_buffer(NodeId node) {
  Node& n = nodes_.at(node);
  if (n.grad.empty()) n.grad.assign(shape_numel(n.shape), 0.0);
  return n.grad;
}

Tape* common_tape(std::initializer_list<const Tensor*> tensors) {
  Tape* tape = nullptr;
  for (const Tensor* t : tensors) {
    if (!t->tape()) continue;
    if (tape && tape != t->tape()) {
      throw TapeError("operation mixes tensors from different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

void ensure_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": produced a non-finite value");
    }
  }
}

}  // namespace pnode
