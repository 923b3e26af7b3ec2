#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pnode {

/// Raised when tensor extents disagree with what an operation needs.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an argument value violates an operation's precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation on finite inputs would produce NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for misuse of the gradient tape (detached loss, repeated backward).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

/// Dense row-major array of doubles. Values are immutable once built, so a
/// Tensor is cheap to copy and safe to share between threads. A tensor that
/// participates in differentiation carries a pointer to the Tape that
/// recorded it together with its node id; such tensors must not outlive
/// their tape.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_->size(); }
  bool is_scalar() const { return data_->size() == 1; }

  std::span<const double> data() const { return *data_; }
  const std::shared_ptr<const std::vector<double>>& buffer() const { return data_; }
  double item() const;
  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  std::vector<double> to_vector() const { return *data_; }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

  /// Gradient accumulated for this tensor by the last backward pass.
  std::optional<Tensor> grad() const;

  /// Same values, no gradient record.
  Tensor detach() const;
  Tensor reshaped(Shape shape) const;

  /// Bitwise equality of shape and values.
  bool identical(const Tensor& other) const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

/// Ordered record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended as operations execute, so the record is always in
/// topological order. backward() walks it once in reverse. A tape accepts a
/// single backward pass; reset_gradients() clears the gradients so the same
/// graph can be differentiated again.
class Tape {
 public:
  /// Propagates the upstream gradient of a node into its inputs through
  /// Tape::gradient_buffer().
  using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf; the returned tensor shares values with `value`.
  Tensor variable(const Tensor& value);

  /// Appends an operation node. `inputs` lists the recorded input nodes.
  Tensor record(Tensor output, std::vector<NodeId> inputs, BackwardFn backward);

  void backward(const Tensor& loss);
  void reset_gradients();

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t operations_visited() const { return visited_; }

  std::optional<Tensor> gradient(NodeId node) const;

  /// Zero-initialized gradient accumulator for `node`; only meaningful while
  /// backward() is running.
  std::span<double> gradient_buffer(NodeId node);

 private:
  struct Node {
    Shape shape;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    std::vector<double> grad;
    bool leaf = false;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::size_t visited_ = 0;
};

/// The tape shared by every recorded tensor in `tensors`, or nullptr if none is
/// recorded. Mixing tapes is an error.
Tape* common_tape(std::initializer_list<const Tensor*> tensors);

/// Throws NumericError naming `op` if any value is NaN or Inf.
void ensure_finite(std::span<const double> values, const char* op);

}  // namespace pnode
