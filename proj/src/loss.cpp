#include "alip/loss.hpp"

#include <cmath>

#include "alip/error.hpp"

namespace alip {

namespace {

void check_embedding_pair(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": embedding shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    if (a.rows() == 0) throw ShapeError(std::string(op) + ": empty batch");
}

void check_tau(const char* op, const Tensor& tau) {
    if (tau.size() != 1) {
        throw ShapeError(std::string(op) + ": temperature must be a scalar, got shape " +
                         shape_str(tau.shape()));
    }
    if (!(tau.at(0) > 0.0)) {
        throw DomainError(std::string(op) + ": temperature must be positive, got " +
                          std::to_string(tau.at(0)));
    }
}

double reduction_factor(Reduction r, std::size_t n) {
    return r == Reduction::Mean ? 1.0 / (2.0 * static_cast<double>(n)) : 1.0;
}

}  // namespace

Reduction reduction_from_string(const std::string& s) {
    if (s == "mean") return Reduction::Mean;
    if (s == "sum") return Reduction::Sum;
    throw DomainError("reduction must be 'mean' or 'sum', got '" + s + "'");
}

std::string to_string(Reduction r) { return r == Reduction::Mean ? "mean" : "sum"; }

void LossConfig::validate() const {
    if (!(initial_tau > 0.0)) {
        throw DomainError("loss config: initial_tau must be positive, got " +
                          std::to_string(initial_tau));
    }
    if (!(tau_min > 0.0) || tau_min > 1.0) {
        throw DomainError("loss config: tau_min must lie in (0, 1], got " +
                          std::to_string(tau_min));
    }
}

Tensor temperature_value(const Tensor& p, double tau_min) {
    if (p.size() != 1) {
        throw ShapeError("temperature_value: log-scale parameter must be a scalar, got shape " +
                         shape_str(p.shape()));
    }
    return clamp(exp(p), tau_min, 1.0);
}

Tensor info_nce(const Tensor& a, const Tensor& b, const Tensor& tau, Reduction reduction) {
    check_embedding_pair("info_nce", a, b);
    check_tau("info_nce", tau);
    std::size_t n = a.rows();

    Tensor logits = mul_scalar_tensor(matmul(a, transpose(b)), reciprocal(tau));
    Tensor fwd = gather_diag(log_softmax_rows(logits));
    Tensor bwd = gather_diag(log_softmax_rows(transpose(logits)));
    return mul_scalar(add(sum(fwd), sum(bwd)), -reduction_factor(reduction, n));
}

LossOutput adaptive_loss(const Tensor& x, const Tensor& t, const Tensor& c,
                         const WeightSet& weights, const Tensor& tau, const LossConfig& config) {
    config.validate();
    check_embedding_pair("adaptive_loss", x, t);
    check_embedding_pair("adaptive_loss", x, c);
    check_tau("adaptive_loss", tau);
    std::size_t n = x.rows();
    if (weights.w_s.size() != n || weights.w_t.size() != n || weights.w_c.size() != n) {
        throw ShapeError("adaptive_loss: weight length mismatch, batch has " + std::to_string(n) +
                         " samples but weights have " + std::to_string(weights.w_s.size()) + "/" +
                         std::to_string(weights.w_t.size()) + "/" +
                         std::to_string(weights.w_c.size()));
    }

    // Per-sample path weights as detached constants. Disabled components act
    // as ones, which is also how the unweighted ablation is expressed.
    std::vector<double> wxt(n), wxc(n);
    for (std::size_t i = 0; i < n; ++i) {
        double ws = config.enable_w_s ? weights.w_s[i] : 1.0;
        wxt[i] = ws * (config.enable_w_t ? weights.w_t[i] : 1.0);
        wxc[i] = ws * (config.enable_w_c ? weights.w_c[i] : 1.0);
    }
    Tensor wxt_t = Tensor::from_data({n}, std::move(wxt));
    Tensor wxc_t = Tensor::from_data({n}, std::move(wxc));

    double factor = reduction_factor(config.reduction, n);
    Tensor inv_tau = reciprocal(tau);

    auto weighted_path = [&](const Tensor& lhs, const Tensor& rhs, const Tensor& w, double& d1_out,
                             double& d2_out) {
        Tensor logits = mul_scalar_tensor(matmul(lhs, transpose(rhs)), inv_tau);
        Tensor d1 = sum(mul(w, gather_diag(log_softmax_rows(logits))));
        Tensor d2 = sum(mul(w, gather_diag(log_softmax_rows(transpose(logits)))));
        d1_out = -factor * d1.item();
        d2_out = -factor * d2.item();
        return mul_scalar(add(d1, d2), -factor);
    };

    LossOutput out;
    out.l_xt = weighted_path(x, t, wxt_t, out.xt_i2t, out.xt_t2i);
    out.l_xc = weighted_path(x, c, wxc_t, out.xc_i2c, out.xc_c2i);
    out.l_total = add(out.l_xt, out.l_xc);
    return out;
}

}  // namespace alip
