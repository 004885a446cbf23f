#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alip/encoder.hpp"
#include "alip/error.hpp"
#include "alip/tensor.hpp"

namespace alip {

// ---------------------------------------------------------------------------
// Decoupled-weight-decay optimizer and learning-rate schedules.
// ---------------------------------------------------------------------------

enum class Schedule { Constant, OneCycle };
Schedule schedule_from_string(const std::string& name);
const char* to_string(Schedule schedule);

struct OptimConfig {
    double lr = 0.001;
    double weight_decay = 0.2;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;

    void validate() const;
};

// Learning rate for `step` (0-based) of a `total_steps`-long run.
//
// one_cycle: linear warmup from peak_lr/25 at step 0 to peak_lr at
// pct_start*total_steps, then cosine decay that lands on peak_lr/1e4 at the
// final step. constant: always peak_lr.
double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, Schedule schedule,
             double pct_start);

// Adam with bias-corrected moments and weight decay applied directly to the
// parameter (scaled by the step's learning rate) instead of being folded into
// the gradient. Parameters whose names appear in `no_decay` skip the decay
// term entirely.
class AdamW {
public:
    struct MomentPair {
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamW(std::vector<NamedParam> params, OptimConfig config,
          std::vector<std::string> no_decay = {});

    // One update over every registered parameter using learning rate lr_t.
    // A parameter with no gradient buffer is treated as having zero gradient.
    void step(double lr_t);

    std::uint64_t step_count() const { return step_count_; }
    const std::vector<NamedParam>& params() const { return params_; }
    const MomentPair& moments(const std::string& name) const;

    // Checkpoint restore hooks.
    void set_moments(const std::string& name, std::vector<double> m, std::vector<double> v);
    void set_step_count(std::uint64_t t) { step_count_ = t; }

private:
    std::vector<NamedParam> params_;
    std::vector<MomentPair> moments_;
    std::vector<bool> decay_enabled_;
    OptimConfig config_;
    std::uint64_t step_count_ = 0;

    std::size_t index_of(const std::string& name) const;
};

}  // namespace alip
