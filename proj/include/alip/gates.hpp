#pragma once

#include <vector>

#include "alip/tensor.hpp"

namespace alip {

// Per-sample cosine similarities between the three embedding views of a
// batch: image x, raw text t, generated caption c. The vectors are detached
// plain doubles; nothing here participates in gradient computation.
struct EmbeddingTriplet {
    Tensor x, t, c;            // [N, E] unit-norm rows
    std::vector<double> s_tc;  // t[i] . c[i]
    std::vector<double> s_xt;  // x[i] . t[i]
    std::vector<double> s_xc;  // x[i] . c[i]

    std::size_t batch_size() const { return s_tc.size(); }
};

// Validates that all three matrices agree in shape and have unit-norm rows
// (tolerance 1e-6), then computes the three per-sample similarity vectors.
// Similarities are clamped to [-1, 1] so downstream running means stay inside
// the cosine range even with rounding at the norm tolerance.
EmbeddingTriplet compute_similarities(const Tensor& x, const Tensor& t, const Tensor& c);

// Exponential running means of batch-mean similarities, plus the gate
// sharpness settings. The histories bootstrap from the first observed batch
// and then follow h <- m*h + (1-m)*mean(s).
struct GateState {
    double h_tc = 0.0;
    double h_xt = 0.0;
    double h_xc = 0.0;
    double m = 0.9;
    bool initialized = false;
    double gamma_s = 2.0;
    double gamma_p = 2.0;

    void validate() const;

    // Folds one batch into the histories. Runs once per training step,
    // before any weights are computed from this state.
    void update(const EmbeddingTriplet& batch);
};

// Per-sample loss weights. Detached constants by construction: computing them
// never records anything on a tape.
struct WeightSet {
    std::vector<double> w_s;  // language consistency, in (0, 1]
    std::vector<double> w_t;  // text path correction
    std::vector<double> w_c;  // caption path correction
};

// Language consistency gate: down-weights samples whose text/caption
// agreement falls below its history, leaves the rest at exactly 1.
//   s <= h:  exp((s - h) * gamma)   (ties give exp(0) = 1)
//   s >  h:  1
double sample_weight(double s_tc, double h_tc, double gamma_s);

// Description consistency gate for one path. Active only when the sample
// gate is below 1; then rewards above-history similarity (weight > 1) and
// penalizes below-history similarity (weight < 1).
double pair_weight(double w_s, double s, double h, double gamma_p);

// Applies both gates across a batch. Requires an initialized GateState.
WeightSet compute_weights(const EmbeddingTriplet& batch, const GateState& state);

}  // namespace alip
