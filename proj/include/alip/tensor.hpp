#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "alip/error.hpp"

namespace alip {

// Dense 64-bit float tensor, row-major, contiguous. Rank 1 and 2 cover
// everything the encoders and losses need; there are no views or strides.
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    // Gradient buffer. Empty until backward() touches this node; once
    // allocated it has the same length as data.
    std::vector<double> grad;

    std::size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

// Value handle over a shared tensor node. Copies are shallow; two Tensor
// objects may alias the same storage (this is how encoder weight sharing
// between the text and caption paths works).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    // Factories.
    static Tensor zeros(const std::vector<std::size_t>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<std::size_t>& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_data(const std::vector<std::size_t>& shape, std::vector<double> data,
                            bool requires_grad = false);
    // Row-major 2-D literal, e.g. Tensor::matrix({{3, 4}}).
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const NodePtr& node() const { return node_; }

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double& at(std::size_t i) { return node_->data[i]; }
    double at(std::size_t i) const { return node_->data[i]; }
    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;
    // Value of a scalar (shape [1]) tensor.
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), 0.0);
    }

private:
    NodePtr node_;
};

// Records executed primitives in execution order (a Wengert list). Execution
// order is a topological order by construction: an operation can only run
// after its operands exist, so a reverse sweep visits consumers before
// producers and each recorded node exactly once.
//
// Constructing a Tape makes it the active tape for the current thread; the
// destructor restores the previous one. Primitives executed while no tape is
// active run in pure inference mode and record nothing.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    // Reverse-mode sweep from a scalar root produced on this tape. Seeds the
    // root gradient with 1, propagates through every reachable recorded
    // operation once, and accumulates into leaf .grad buffers. Intermediate
    // gradients are freed as soon as they have been consumed, so repeated
    // calls accumulate into leaves without cross-talk.
    void backward(const Tensor& root);

    void record(NodePtr output, std::function<void()> backward_fn);
    std::size_t num_entries() const { return entries_.size(); }

private:
    struct Entry {
        NodePtr output;
        std::function<void()> backward_fn;
    };
    std::vector<Entry> entries_;
    Tape* prev_ = nullptr;
};

// ==================== Primitives ====================
// Every primitive validates shapes up front (throwing ShapeError with the
// operation name and shapes), computes the forward value, and registers a
// backward rule on the active tape when gradients are required.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise
Tensor mul_scalar(const Tensor& a, double c);       // constant scale
// Broadcast-multiply by a scalar tensor (shape [1]); gradient flows into both.
Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s);
Tensor reciprocal(const Tensor& a);                 // 1/x, error on zero entries
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);                        // error on non-positive entries
Tensor relu(const Tensor& a);
// Row-wise softmax with max subtraction for stability.
Tensor softmax_rows(const Tensor& a);
// Row-wise log-softmax; stable for logit ranges where softmax+log underflows.
Tensor log_softmax_rows(const Tensor& a);
// Row-wise L2 normalization: x / sqrt(sum x^2 + 1e-12).
Tensor l2_normalize_rows(const Tensor& a);
Tensor mean_rows(const Tensor& a);                  // [N,C] -> [N]
Tensor sum(const Tensor& a);                        // -> scalar [1]
Tensor gather_diag(const Tensor& a);                // [N,N] -> [N]
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
// rows of `table` selected by ids; backward scatter-adds into the table.
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids);
// Adds a [1,C] (or [C]) row vector to every row of a [N,C] matrix.
Tensor add_rowvec(const Tensor& a, const Tensor& v);

// Epsilon added inside the square root of l2_normalize_rows.
inline constexpr double kNormalizeEps = 1e-12;

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace alip
