#include "alip/gates.hpp"

#include <algorithm>
#include <cmath>

#include "alip/error.hpp"

namespace alip {

namespace {

constexpr double kUnitNormTol = 1e-6;

void check_unit_rows(const char* which, const Tensor& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m.at(i, j) * m.at(i, j);
        double norm = std::sqrt(s);
        if (std::fabs(norm - 1.0) > kUnitNormTol) {
            throw DomainError(std::string("compute_similarities: ") + which + " row " +
                              std::to_string(i) + " has norm " + std::to_string(norm) +
                              ", expected 1 within 1e-6");
        }
    }
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double row_dot_clamped(const Tensor& a, const Tensor& b, std::size_t row) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a.at(row, j) * b.at(row, j);
    return std::clamp(s, -1.0, 1.0);
}

}  // namespace

EmbeddingTriplet compute_similarities(const Tensor& x, const Tensor& t, const Tensor& c) {
    if (x.rank() != 2 || t.rank() != 2 || c.rank() != 2 || x.shape() != t.shape() ||
        x.shape() != c.shape()) {
        throw ShapeError("compute_similarities: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(t.shape()) + " vs " + shape_str(c.shape()));
    }
    if (x.rows() == 0) throw ShapeError("compute_similarities: empty batch");
    check_unit_rows("x", x);
    check_unit_rows("t", t);
    check_unit_rows("c", c);

    EmbeddingTriplet out;
    out.x = x;
    out.t = t;
    out.c = c;
    std::size_t n = x.rows();
    out.s_tc.resize(n);
    out.s_xt.resize(n);
    out.s_xc.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.s_tc[i] = row_dot_clamped(t, c, i);
        out.s_xt[i] = row_dot_clamped(x, t, i);
        out.s_xc[i] = row_dot_clamped(x, c, i);
    }
    return out;
}

void GateState::validate() const {
    if (!(gamma_s > 0.0) || !(gamma_p > 0.0)) {
        throw DomainError("gate state: gamma_s and gamma_p must be positive, got " +
                          std::to_string(gamma_s) + " and " + std::to_string(gamma_p));
    }
    if (!(m >= 0.0) || !(m < 1.0)) {
        throw DomainError("gate state: momentum m must lie in [0, 1), got " + std::to_string(m));
    }
}

void GateState::update(const EmbeddingTriplet& batch) {
    validate();
    if (batch.batch_size() == 0) throw ShapeError("gate update: empty batch");
    double mean_tc = mean(batch.s_tc);
    double mean_xt = mean(batch.s_xt);
    double mean_xc = mean(batch.s_xc);
    if (!initialized) {
        // Bootstrap: the first batch defines the history directly, so early
        // steps are not biased toward an arbitrary zero init.
        h_tc = mean_tc;
        h_xt = mean_xt;
        h_xc = mean_xc;
        initialized = true;
        return;
    }
    h_tc = m * h_tc + (1.0 - m) * mean_tc;
    h_xt = m * h_xt + (1.0 - m) * mean_xt;
    h_xc = m * h_xc + (1.0 - m) * mean_xc;
}

double sample_weight(double s_tc, double h_tc, double gamma_s) {
    if (s_tc <= h_tc) return std::exp((s_tc - h_tc) * gamma_s);
    return 1.0;
}

double pair_weight(double w_s, double s, double h, double gamma_p) {
    if (w_s < 1.0) return std::exp((s - h) * gamma_p);
    return 1.0;
}

WeightSet compute_weights(const EmbeddingTriplet& batch, const GateState& state) {
    state.validate();
    if (!state.initialized) {
        throw Error("compute_weights: gate state not initialized; update it with a batch first");
    }
    std::size_t n = batch.batch_size();
    WeightSet w;
    w.w_s.resize(n);
    w.w_t.resize(n);
    w.w_c.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double ws = sample_weight(batch.s_tc[i], state.h_tc, state.gamma_s);
        w.w_s[i] = ws;
        w.w_t[i] = pair_weight(ws, batch.s_xt[i], state.h_xt, state.gamma_p);
        w.w_c[i] = pair_weight(ws, batch.s_xc[i], state.h_xc, state.gamma_p);
    }
    return w;
}

}  // namespace alip
