#pragma once

#include <string>

#include "alip/gates.hpp"
#include "alip/tensor.hpp"

namespace alip {

enum class Reduction { Mean, Sum };

Reduction reduction_from_string(const std::string& s);
std::string to_string(Reduction r);

struct LossConfig {
    double initial_tau = 0.07;
    bool tau_learnable = true;
    double tau_min = 0.01;
    Reduction reduction = Reduction::Mean;
    // Ablation switches: a disabled weight component behaves as all-ones.
    bool enable_w_s = true;
    bool enable_w_t = true;
    bool enable_w_c = true;

    void validate() const;
};

// Learnable temperature mapping: tau = clamp(exp(p), tau_min, 1). Kept in
// log space so gradient steps multiply rather than add.
Tensor temperature_value(const Tensor& p, double tau_min);

// Symmetric contrastive loss between two [N, E] embedding matrices:
// cross-entropy of the row softmax against the diagonal, in both directions.
// Mean reduction divides the summed 2N terms by 2N.
Tensor info_nce(const Tensor& a, const Tensor& b, const Tensor& tau, Reduction reduction);

struct LossOutput {
    Tensor l_xt;     // image<->text path, scalar on the tape
    Tensor l_xc;     // image<->caption path
    Tensor l_total;  // l_xt + l_xc
    // Detached per-direction components for telemetry; each path loss is the
    // sum of its two directions.
    double xt_i2t = 0.0;
    double xt_t2i = 0.0;
    double xc_i2c = 0.0;
    double xc_c2i = 0.0;
};

// Weighted bi-path objective. Sample i's contribution to the (x,t) path is
// scaled by w_s[i]*w_t[i] and to the (x,c) path by w_s[i]*w_c[i]; the weights
// enter as detached constants so no gradient flows into the gates.
LossOutput adaptive_loss(const Tensor& x, const Tensor& t, const Tensor& c,
                         const WeightSet& weights, const Tensor& tau, const LossConfig& config);

}  // namespace alip
