#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "alip/corpus.hpp"
#include "alip/encoder.hpp"
#include "alip/gates.hpp"
#include "alip/loss.hpp"
#include "alip/optimizer.hpp"
#include "alip/tensor.hpp"

namespace alip {

// ---------------------------------------------------------------------------
// Training loop: encode triplets, refresh the gate statistics, apply the
// weighted bi-path loss, update parameters, log one telemetry row per step.
// ---------------------------------------------------------------------------

enum class TrainMode { Alip, ClipBaseline };
TrainMode train_mode_from_string(const std::string& name);
const char* to_string(TrainMode mode);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    double lr = 0.001;
    double weight_decay = 0.2;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-6;
    Schedule schedule = Schedule::OneCycle;
    double pct_start = 0.1;
    double m = 0.9;  // momentum of the historical similarity averages
    double gamma_s = 2.0;
    double gamma_p = 2.0;
    LossConfig loss;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::Alip;
    EncoderConfig encoder;

    void validate() const;
};

// One row per optimizer step. `step` is 1-based and global across resumes;
// `epoch` is the 1-based epoch the step belongs to.
struct StepTelemetry {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    double l_xt = 0.0, l_xc = 0.0, l_total = 0.0;
    double w_s_mean = 0.0, w_s_min = 0.0, w_s_max = 0.0;
    double w_t_mean = 0.0, w_t_min = 0.0, w_t_max = 0.0;
    double w_c_mean = 0.0, w_c_min = 0.0, w_c_max = 0.0;
    double h_tc = 0.0, h_xt = 0.0, h_xc = 0.0;
    double tau = 0.0;
    double lr = 0.0;
};

// Sample-level gate weights captured at an epoch boundary with the gate
// statistics frozen; `sample_index` points into the trainer's sample list.
struct SampleWeightRecord {
    std::size_t epoch = 0;
    std::size_t sample_index = 0;
    double w_s = 0.0, w_t = 0.0, w_c = 0.0;
};

struct TrainResult {
    std::vector<StepTelemetry> telemetry;
    std::vector<SampleWeightRecord> sample_weights;
};

std::string telemetry_csv_header();
std::string to_csv_row(const StepTelemetry& row);
std::string sample_weights_csv_header();
std::string to_csv_row(const SampleWeightRecord& row);

void write_telemetry_csv(const std::vector<StepTelemetry>& rows, const std::string& path);
void append_telemetry_csv(const std::vector<StepTelemetry>& rows, const std::string& path);
void write_sample_weights_csv(const std::vector<SampleWeightRecord>& rows,
                              const std::string& path);
std::vector<SampleWeightRecord> read_sample_weights_csv(const std::string& path);

class Trainer {
public:
    Trainer(std::vector<TripletSample> samples, TrainConfig config);

    // Advances training until `stop_after_epochs` epochs have completed in
    // total (0 means the full config.epochs horizon) and returns the rows
    // produced by this call. Callable repeatedly; the learning-rate schedule
    // is always planned over the full horizon.
    TrainResult train(std::size_t stop_after_epochs = 0);

    void log_sample_weights(bool enabled) { log_sample_weights_ = enabled; }

    DualEncoder& encoder() { return *encoder_; }
    const DualEncoder& encoder() const { return *encoder_; }
    const GateState& gate_state() const { return gate_state_; }
    const TrainConfig& config() const { return config_; }
    double temperature() const;
    const Tensor& temperature_param() const { return tau_p_; }
    std::uint64_t global_step() const { return global_step_; }
    std::size_t completed_epochs() const { return completed_epochs_; }
    std::size_t steps_per_epoch() const { return samples_.size() / config_.batch_size; }
    const std::vector<TripletSample>& samples() const { return samples_; }

    // Versioned binary snapshot of parameters, optimizer moments, gate
    // statistics, temperature, and progress counters. Loading requires a
    // trainer built with an identical config.
    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    std::vector<TripletSample> samples_;
    TrainConfig config_;
    std::unique_ptr<DualEncoder> encoder_;
    Tensor tau_p_;
    GateState gate_state_;
    std::unique_ptr<AdamW> optimizer_;
    std::uint64_t global_step_ = 0;
    std::size_t completed_epochs_ = 0;
    bool log_sample_weights_ = false;

    StepTelemetry run_step(const TripletBatch& batch, std::size_t epoch_index);
    std::vector<SampleWeightRecord> dump_sample_weights(std::size_t epoch_label);
    std::string config_fingerprint() const;
};

// First 90% / last 10% split used to keep evaluation data out of training.
struct CorpusSplit {
    std::vector<TripletSample> train;
    std::vector<TripletSample> held_out;
};
CorpusSplit split_corpus(const std::vector<TripletSample>& samples, double held_out_fraction = 0.1);

}  // namespace alip
