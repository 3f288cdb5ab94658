#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sleepscore {

class Rng;

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Padding { Same, Valid };
enum class Mode { Train, Eval };

/// One node of the (implicit, acyclic) differentiation graph. Holds the
/// forward value, references to the nodes it was computed from, and a
/// closure that maps this node's upstream gradient onto its parents.
struct TensorNode {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated (zeroed) iff requires_grad
    std::vector<std::shared_ptr<TensorNode>> parents;
    // parent_msgs entries are pre-zeroed accumulators; nullptr means that
    // parent needs no gradient and the kernel may skip it.
    std::function<void(std::span<const double> out_msg,
                       std::span<std::vector<double>*> parent_msgs)>
        backward_fn;
};

/// Value-semantic handle to a TensorNode. Copies share the node.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);
    /// Uniform values in [lo, hi), drawn from rng.
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t axis) const { return node_->shape[axis]; }
    std::int64_t ndim() const { return static_cast<std::int64_t>(node_->shape.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->values.size()); }

    std::span<const double> values() const { return node_->values; }
    std::span<double> values() { return node_->values; }
    std::span<const double> grad() const;
    std::span<double> grad();
    bool requires_grad() const { return node_->requires_grad; }

    void zero_grad();
    /// Leaf copy of the current values, disconnected from any graph.
    Tensor detached(bool requires_grad = false) const;

    const std::shared_ptr<TensorNode>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<TensorNode> node_;
};

// ---- differentiable operations ----

Tensor matmul(const Tensor& a, const Tensor& b);

/// 1D cross-correlation. input [batch, length, in_ch], filters
/// [width, in_ch, out_ch] -> [batch, out_len, out_ch].
Tensor conv1d(const Tensor& input, const Tensor& filters, std::int64_t stride,
              Padding padding);

/// Windowed maximum over the length axis of [batch, length, ch], padded
/// same-style with -inf. Gradient goes to the first maximum per window.
Tensor maxpool1d(const Tensor& input, std::int64_t size, std::int64_t stride);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Broadcast a length-n vector across the rows of an [m, n] matrix.
Tensor add_rowvec(const Tensor& mat, const Tensor& vec);
Tensor mul_rowvec(const Tensor& mat, const Tensor& vec);

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t count);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor sum(const Tensor& x);
Tensor scale(const Tensor& x, double c);

/// Mean over the batch of -log softmax(logits)[target], stabilized by max
/// subtraction. logits [batch, classes]; returns a scalar.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::int64_t>& targets);

/// Reverse-mode sweep from a scalar loss. Fills .grad on every reachable
/// requires_grad tensor; repeated sweeps accumulate additively.
void backward(const Tensor& loss);

/// Escape hatch for layers with hand-derived backward rules (batch norm,
/// dropout): wraps a computed result as a graph node.
Tensor make_op(Shape out_shape, std::vector<double> out_values,
               std::vector<Tensor> parents,
               std::function<void(std::span<const double>,
                                  std::span<std::vector<double>*>)>
                   backward_fn);

std::int64_t conv1d_out_len(std::int64_t length, std::int64_t width,
                            std::int64_t stride, Padding padding);
std::int64_t pool1d_out_len(std::int64_t length, std::int64_t stride);

/// Worker threads used inside dense kernels. Results are bit-identical for
/// any thread count.
void set_num_threads(int n);
int num_threads();

}  // namespace sleepscore
