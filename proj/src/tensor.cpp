#include "alip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace alip {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void check_rank2(const char* op, const Tensor& a) {
    if (a.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got shape " +
                         shape_str(a.shape()));
    }
}

bool grads_wanted(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

// Creates the output tensor and, when the active tape wants gradients for any
// input, marks it differentiable and records the backward rule.
template <typename BackwardFn>
Tensor make_result(std::vector<std::size_t> shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn&& backward_fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    Tensor out(node);
    if (grads_wanted(inputs)) {
        node->requires_grad = true;
        Tape::active()->record(node, std::forward<BackwardFn>(backward_fn)(node));
    }
    return out;
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// ==================== Tensor ====================

Tensor Tensor::zeros(const std::vector<std::size_t>& shape, bool requires_grad) {
    return from_data(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const std::vector<std::size_t>& shape, double value, bool requires_grad) {
    return from_data(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::from_data(const std::vector<std::size_t>& shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape.empty() || shape.size() > 2) {
        throw ShapeError("tensor: rank must be 1 or 2, got shape " + shape_str(shape));
    }
    if (data.size() != shape_numel(shape)) {
        throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("tensor: ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return from_data({r, c}, std::move(data), requires_grad);
}

std::size_t Tensor::rows() const {
    check_rank2("rows", *this);
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    check_rank2("cols", *this);
    return node_->shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return node_->data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return node_->data[0];
}

// ==================== Tape ====================

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(NodePtr output, std::function<void()> backward_fn) {
    entries_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& root) {
    if (!root.defined() || root.size() != 1) {
        throw ShapeError("backward: root must be a scalar, got shape " +
                         (root.defined() ? shape_str(root.shape()) : std::string("<null>")));
    }
    // The root has to be an output recorded on this tape; walking from its
    // entry guarantees consumers are processed before producers.
    std::ptrdiff_t root_idx = -1;
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(entries_.size()) - 1; i >= 0; --i) {
        if (entries_[static_cast<std::size_t>(i)].output == root.node()) {
            root_idx = i;
            break;
        }
    }
    if (root_idx < 0) {
        throw Error("backward: root was not produced on this tape");
    }
    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (std::ptrdiff_t i = root_idx; i >= 0; --i) {
        auto& entry = entries_[static_cast<std::size_t>(i)];
        if (entry.output->grad.empty()) continue;  // not reachable from root
        entry.backward_fn();
        // Intermediate gradients are consumed exactly once; dropping them here
        // keeps later backward() calls on this tape independent.
        entry.output->grad.clear();
        entry.output->grad.shrink_to_fit();
    }
}

// ==================== Primitives ====================

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    return make_result(a.shape(), std::move(out), {&a, &b}, [&](const NodePtr& o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] += o->grad[i];
            }
        };
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    return make_result(a.shape(), std::move(out), {&a, &b}, [&](const NodePtr& o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] -= o->grad[i];
            }
        };
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    return make_result(a.shape(), std::move(out), {&a, &b}, [&](const NodePtr& o) {
        auto an = a.node(), bn = b.node();
        // d(a*b)/da = b, d(a*b)/db = a
        return [an, bn, o]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i)
                    an->grad[i] += o->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i)
                    bn->grad[i] += o->grad[i] * an->data[i];
            }
        };
    });
}

Tensor mul_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
    return make_result(a.shape(), std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        return [an, c, o]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * c;
        };
    });
}

Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) {
        throw ShapeError("mul_scalar_tensor: scale must be a scalar, got shape " +
                         shape_str(s.shape()));
    }
    double sv = s.at(0);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * sv;
    return make_result(a.shape(), std::move(out), {&a, &s}, [&](const NodePtr& o) {
        auto an = a.node(), sn = s.node();
        return [an, sn, o]() {
            double sv2 = sn->data[0];
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * sv2;
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                double acc = 0.0;
                for (std::size_t i = 0; i < o->grad.size(); ++i) acc += o->grad[i] * an->data[i];
                sn->grad[0] += acc;
            }
        };
    });
}

Tensor reciprocal(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.at(i) == 0.0) {
            throw DomainError("reciprocal: zero input at index " + std::to_string(i));
        }
        out[i] = 1.0 / a.at(i);
    }
    return make_result(a.shape(), std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        // d(1/x)/dx = -1/x^2
        return [an, o]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) {
                double y = o->data[i];
                an->grad[i] -= o->grad[i] * y * y;
            }
        };
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) {
        throw DomainError("clamp: lo " + std::to_string(lo) + " exceeds hi " + std::to_string(hi));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(a.at(i), lo), hi);
    return make_result(a.shape(), std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        // Subgradient 1 inside [lo, hi] (boundary inclusive), 0 outside.
        return [an, lo, hi, o]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) {
                if (an->data[i] >= lo && an->data[i] <= hi) an->grad[i] += o->grad[i];
            }
        };
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2("matmul", a);
    check_rank2("matmul", b);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double av = ad[i * k + p];
            if (av == 0.0) continue;
            const double* brow = &bd[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_result({m, n}, std::move(out), {&a, &b}, [&](const NodePtr& o) {
        auto an = a.node(), bn = b.node();
        // dL/dA = G B^T, dL/dB = A^T G
        return [an, bn, o, m, k, n]() {
            const auto& g = o->grad;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = &g[i * n];
                        const double* brow = &bn->data[p * n];
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        an->grad[i * k + p] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = &an->data[i * k];
                    const double* grow = &g[i * n];
                    for (std::size_t p = 0; p < k; ++p) {
                        double av = arow[p];
                        if (av == 0.0) continue;
                        double* brow = &bn->grad[p * n];
                        for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        };
    });
}

Tensor transpose(const Tensor& a) {
    check_rank2("transpose", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
    return make_result({n, m}, std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        return [an, o, m, n]() {
            an->ensure_grad();
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < m; ++i) an->grad[i * n + j] += o->grad[j * m + i];
        };
    });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
    return make_result(a.shape(), std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        // d(e^x)/dx = e^x, reuse the forward value
        return [an, o]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                an->grad[i] += o->grad[i] * o->data[i];
        };
    });
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a.at(i) > 0.0)) {
            throw DomainError("log: non-positive input " + std::to_string(a.at(i)) +
                              " at index " + std::to_string(i));
        }
        out[i] = std::log(a.at(i));
    }
    return make_result(a.shape(), std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        return [an, o]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                an->grad[i] += o->grad[i] / an->data[i];
        };
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
    return make_result(a.shape(), std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        return [an, o]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                if (an->data[i] > 0.0) an->grad[i] += o->grad[i];
        };
    });
}

Tensor softmax_rows(const Tensor& a) {
    check_rank2("softmax_rows", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = a.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double e = std::exp(a.at(i, j) - mx);
            out[i * n + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= denom;
    }
    return make_result({m, n}, std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        // grad_in = y * (g - <g, y>) per row
        return [an, o, m, n]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = &o->data[i * n];
                const double* g = &o->grad[i * n];
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < n; ++j)
                    an->grad[i * n + j] += y[j] * (g[j] - dot);
            }
        };
    });
}

Tensor log_softmax_rows(const Tensor& a) {
    check_rank2("log_softmax_rows", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = a.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(a.at(i, j) - mx);
        double lse = mx + std::log(denom);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) - lse;
    }
    return make_result({m, n}, std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        // grad_in = g - softmax * sum(g) per row
        return [an, o, m, n]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = &o->data[i * n];
                const double* g = &o->grad[i * n];
                double gsum = 0.0;
                for (std::size_t j = 0; j < n; ++j) gsum += g[j];
                for (std::size_t j = 0; j < n; ++j)
                    an->grad[i * n + j] += g[j] - std::exp(y[j]) * gsum;
            }
        };
    });
}

Tensor l2_normalize_rows(const Tensor& a) {
    check_rank2("l2_normalize_rows", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.at(i, j) * a.at(i, j);
        norms[i] = std::sqrt(s + kNormalizeEps);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) / norms[i];
    }
    return make_result({m, n}, std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        // y = x/n with n = sqrt(|x|^2 + eps):
        // grad_in = g/n - x <g, x> / n^3
        return [an, o, norms = std::move(norms), m, n]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* x = &an->data[i * n];
                const double* g = &o->grad[i * n];
                double nr = norms[i];
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * x[j];
                double c = dot / (nr * nr * nr);
                for (std::size_t j = 0; j < n; ++j)
                    an->grad[i * n + j] += g[j] / nr - x[j] * c;
            }
        };
    });
}

Tensor mean_rows(const Tensor& a) {
    check_rank2("mean_rows", a);
    std::size_t m = a.rows(), n = a.cols();
    if (n == 0) throw ShapeError("mean_rows: zero-width rows in shape " + shape_str(a.shape()));
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.at(i, j);
        out[i] = s / static_cast<double>(n);
    }
    return make_result({m}, std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        return [an, o, m, n]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                double g = o->grad[i] / static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g;
            }
        };
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
    return make_result({1}, {s}, {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        return [an, o]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += o->grad[0];
        };
    });
}

Tensor gather_diag(const Tensor& a) {
    check_rank2("gather_diag", a);
    if (a.rows() != a.cols()) {
        throw ShapeError("gather_diag: matrix must be square, got shape " + shape_str(a.shape()));
    }
    std::size_t n = a.rows();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.at(i, i);
    return make_result({n}, std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        return [an, o, n]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) an->grad[i * n + i] += o->grad[i];
        };
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    std::size_t n = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        check_rank2("concat_rows", p);
        if (p.cols() != n) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        }
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * n);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

    bool wants = false;
    if (Tape::active()) {
        for (const auto& p : parts)
            if (p.requires_grad()) wants = true;
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = {total, n};
    node->data = std::move(out);
    Tensor result(node);
    if (wants) {
        node->requires_grad = true;
        std::vector<NodePtr> ins;
        ins.reserve(parts.size());
        for (const auto& p : parts) ins.push_back(p.node());
        Tape::active()->record(node, [ins, node, n]() {
            std::size_t offset = 0;
            for (const auto& in : ins) {
                std::size_t cnt = in->data.size();
                if (in->requires_grad) {
                    in->ensure_grad();
                    for (std::size_t i = 0; i < cnt; ++i) in->grad[i] += node->grad[offset + i];
                }
                offset += cnt;
            }
            (void)n;
        });
    }
    return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        check_rank2("concat_cols", p);
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        total += p.cols();
    }
    std::vector<double> out(m * total);
    std::size_t col_off = 0;
    for (const auto& p : parts) {
        std::size_t n = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * total + col_off + j] = p.at(i, j);
        col_off += n;
    }

    bool wants = false;
    if (Tape::active()) {
        for (const auto& p : parts)
            if (p.requires_grad()) wants = true;
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = {m, total};
    node->data = std::move(out);
    Tensor result(node);
    if (wants) {
        node->requires_grad = true;
        std::vector<NodePtr> ins;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            ins.push_back(p.node());
            widths.push_back(p.cols());
        }
        Tape::active()->record(node, [ins, widths, node, m, total]() {
            std::size_t off = 0;
            for (std::size_t k = 0; k < ins.size(); ++k) {
                std::size_t n = widths[k];
                if (ins[k]->requires_grad) {
                    ins[k]->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            ins[k]->grad[i * n + j] += node->grad[i * total + off + j];
                }
                off += n;
            }
        });
    }
    return result;
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    check_rank2("slice_rows", a);
    std::size_t m = a.rows(), n = a.cols();
    if (start + count > m) {
        throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds " + shape_str(a.shape()));
    }
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                            a.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
    return make_result({count, n}, std::move(out), {&a}, [&](const NodePtr& o) {
        auto an = a.node();
        return [an, o, start, count, n]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < count * n; ++i) an->grad[start * n + i] += o->grad[i];
        };
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids) {
    check_rank2("embedding_lookup", table);
    std::size_t v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::int64_t id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw DomainError("embedding_lookup: token id " + std::to_string(id) +
                              " out of range [0, " + std::to_string(v) + ")");
        }
        const double* row = &table.data()[static_cast<std::size_t>(id) * d];
        std::copy(row, row + d, &out[i * d]);
    }
    return make_result({ids.size(), d}, std::move(out), {&table}, [&](const NodePtr& o) {
        auto tn = table.node();
        return [tn, o, ids, d]() {
            tn->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* dst = &tn->grad[static_cast<std::size_t>(ids[i]) * d];
                const double* src = &o->grad[i * d];
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    check_rank2("add_rowvec", a);
    std::size_t m = a.rows(), n = a.cols();
    std::size_t vlen = v.size();
    if (vlen != n || (v.rank() == 2 && v.rows() != 1)) {
        throw ShapeError("add_rowvec: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(v.shape()));
    }
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) + v.at(j);
    return make_result({m, n}, std::move(out), {&a, &v}, [&](const NodePtr& o) {
        auto an = a.node(), vn = v.node();
        return [an, vn, o, m, n]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m * n; ++i) an->grad[i] += o->grad[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) vn->grad[j] += o->grad[i * n + j];
            }
        };
    });
}

}  // namespace alip
