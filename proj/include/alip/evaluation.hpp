#pragma once

// Read-only analysis over trained models and training artifacts: cross-modal
// retrieval recall, per-category weight dynamics, and the gamma grid sweep.

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "alip/corpus.hpp"
#include "alip/encoder.hpp"
#include "alip/trainer.hpp"

namespace alip {

// ---------------------------------------------------------------------------
// retrieval
// ---------------------------------------------------------------------------

enum class RetrievalDirection { ImageToText, TextToImage };

const char* to_string(RetrievalDirection direction);

struct RetrievalReport {
    RetrievalDirection direction = RetrievalDirection::ImageToText;
    std::map<std::size_t, double> recall_at;  // K -> fraction of queries in [0,1]
    std::size_t n_queries = 0;
};

struct RetrievalResult {
    RetrievalReport i2t;
    RetrievalReport t2i;
};

// Recall over a dense query-by-candidate score matrix where query i's true
// match is candidate i. A tie on score goes to the lower candidate index, so
// ranks are fully deterministic.
std::map<std::size_t, double> recall_from_scores(const std::vector<std::vector<double>>& scores,
                                                 const std::vector<std::size_t>& ks);

// Embeds the samples' images and texts with the model and reports recall@K in
// both directions. The held-out set must be nonempty; pass it through
// filter_clean first so every query has a valid ground-truth match.
RetrievalResult retrieval_eval(const DualEncoder& model,
                               const std::vector<TripletSample>& held_out,
                               const std::vector<std::size_t>& ks = {1, 5, 10});

// Keeps only samples whose text and caption both describe their own concept.
std::vector<TripletSample> filter_clean(const std::vector<TripletSample>& samples);

void write_retrieval_csv(const RetrievalResult& result, const std::string& path);

// ---------------------------------------------------------------------------
// weight dynamics
// ---------------------------------------------------------------------------

struct WeightMean {
    bool present = false;  // absent categories stay absent, never zero-filled
    std::size_t count = 0;
    double w_s = 0.0;
    double w_t = 0.0;
    double w_c = 0.0;
};

struct EpochWeightSummary {
    std::size_t epoch = 0;
    WeightMean overall;
    std::array<WeightMean, kNumNoiseCategories> by_category;
};

struct WeightDynamicsReport {
    std::vector<EpochWeightSummary> epochs;  // ascending by epoch
};

// Joins per-sample weight dumps against the corpus to produce per-epoch means
// overall and split by noise category. Empty records mean training ran without
// --log-sample-weights, which is an error here.
WeightDynamicsReport weight_dynamics(const std::vector<SampleWeightRecord>& records,
                                     const std::vector<TripletSample>& samples);

void write_weight_dynamics_csv(const WeightDynamicsReport& report, const std::string& path);

// ---------------------------------------------------------------------------
// gamma sweep
// ---------------------------------------------------------------------------

struct SweepCell {
    double gamma_s = 0.0;
    double gamma_p = 0.0;
    double i2t_r1 = 0.0;
    double t2i_r1 = 0.0;
};

// One full train + retrieval eval per (gamma_s, gamma_p) cell, every cell on
// the same seed and the same 90/10 corpus split. Cells run on up to
// alip_threads() worker threads; results come back in row-major grid order
// regardless of scheduling.
std::vector<SweepCell> gamma_sweep(const std::vector<TripletSample>& corpus,
                                   const TrainConfig& base,
                                   const std::vector<double>& gamma_s_grid,
                                   const std::vector<double>& gamma_p_grid);

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path);

// Worker-thread cap from the ALIP_THREADS environment variable; unset means 1.
std::size_t alip_threads();

}  // namespace alip
