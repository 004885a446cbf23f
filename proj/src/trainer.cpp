#include "alip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <fstream>
#include <sstream>

#include "alip/serialize.hpp"

namespace alip {

TrainMode train_mode_from_string(const std::string& name) {
    if (name == "alip") return TrainMode::Alip;
    if (name == "clip_baseline") return TrainMode::ClipBaseline;
    throw DomainError("unknown train mode '" + name + "' (expected alip or clip_baseline)");
}

const char* to_string(TrainMode mode) {
    return mode == TrainMode::Alip ? "alip" : "clip_baseline";
}

void TrainConfig::validate() const {
    if (epochs == 0) throw DomainError("train config: epochs must be positive");
    if (batch_size == 0) throw DomainError("train config: batch_size must be positive");
    OptimConfig optim{lr, weight_decay, beta1, beta2, adam_eps};
    optim.validate();
    if (schedule == Schedule::OneCycle && !(pct_start > 0.0 && pct_start < 1.0))
        throw DomainError("train config: pct_start must lie in (0, 1)");
    if (!(m >= 0.0 && m < 1.0)) throw DomainError("train config: m must lie in [0, 1)");
    if (!(gamma_s > 0.0)) throw DomainError("train config: gamma_s must be positive");
    if (!(gamma_p > 0.0)) throw DomainError("train config: gamma_p must be positive");
    loss.validate();
    encoder.validate();
}

// --------------------------------------------------------------------------
// Telemetry CSV
// --------------------------------------------------------------------------

std::string telemetry_csv_header() {
    return "step,epoch,L_xt,L_xc,L_total,"
           "W_s_mean,W_s_min,W_s_max,W_t_mean,W_t_min,W_t_max,W_c_mean,W_c_min,W_c_max,"
           "H_tc,H_xt,H_xc,tau,lr";
}

std::string to_csv_row(const StepTelemetry& r) {
    std::string out = std::to_string(r.step) + ',' + std::to_string(r.epoch);
    for (double v : {r.l_xt, r.l_xc, r.l_total, r.w_s_mean, r.w_s_min, r.w_s_max, r.w_t_mean,
                     r.w_t_min, r.w_t_max, r.w_c_mean, r.w_c_min, r.w_c_max, r.h_tc, r.h_xt,
                     r.h_xc, r.tau, r.lr}) {
        out += ',';
        out += format_double(v);
    }
    return out;
}

std::string sample_weights_csv_header() { return "epoch,sample_index,W_s,W_t,W_c"; }

std::string to_csv_row(const SampleWeightRecord& r) {
    return std::to_string(r.epoch) + ',' + std::to_string(r.sample_index) + ',' +
           format_double(r.w_s) + ',' + format_double(r.w_t) + ',' + format_double(r.w_c);
}

namespace {

void write_csv(const std::string& header, const std::vector<std::string>& rows,
               const std::string& path, bool append) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    if (!append || out.tellp() == std::streampos(0)) out << header << '\n';
    for (const auto& row : rows) out << row << '\n';
    if (!out) throw IoError("failed while writing '" + path + "'");
}

std::vector<std::string> render_rows(const std::vector<StepTelemetry>& rows) {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(to_csv_row(r));
    return out;
}

}  // namespace

void write_telemetry_csv(const std::vector<StepTelemetry>& rows, const std::string& path) {
    write_csv(telemetry_csv_header(), render_rows(rows), path, false);
}

void append_telemetry_csv(const std::vector<StepTelemetry>& rows, const std::string& path) {
    write_csv(telemetry_csv_header(), render_rows(rows), path, true);
}

void write_sample_weights_csv(const std::vector<SampleWeightRecord>& rows,
                              const std::string& path) {
    std::vector<std::string> rendered;
    rendered.reserve(rows.size());
    for (const auto& r : rows) rendered.push_back(to_csv_row(r));
    write_csv(sample_weights_csv_header(), rendered, path, false);
}

std::vector<SampleWeightRecord> read_sample_weights_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line) || line != sample_weights_csv_header())
        throw ParseError("line 1: expected sample-weight header '" + sample_weights_csv_header() +
                         "'");
    std::vector<SampleWeightRecord> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::array<std::string, 5> fields;
        std::size_t start = 0, field = 0;
        for (; field < 5; ++field) {
            std::size_t pos = line.find(',', start);
            if (pos == std::string::npos && field < 4) break;
            fields[field] = line.substr(start, pos == std::string::npos ? pos : pos - start);
            start = pos + 1;
        }
        if (field != 5)
            throw ParseError("line " + std::to_string(line_no) + ": expected 5 comma-separated " +
                             "fields");
        SampleWeightRecord r;
        std::uint64_t e = 0, idx = 0;
        if (!try_parse_u64(fields[0], e) || !try_parse_u64(fields[1], idx) ||
            !try_parse_double(fields[2], r.w_s) || !try_parse_double(fields[3], r.w_t) ||
            !try_parse_double(fields[4], r.w_c))
            throw ParseError("line " + std::to_string(line_no) + ": malformed sample-weight row");
        r.epoch = static_cast<std::size_t>(e);
        r.sample_index = static_cast<std::size_t>(idx);
        rows.push_back(r);
    }
    return rows;
}

// --------------------------------------------------------------------------
// Trainer
// --------------------------------------------------------------------------

Trainer::Trainer(std::vector<TripletSample> samples, TrainConfig config)
    : samples_(std::move(samples)), config_(std::move(config)) {
    config_.validate();
    if (samples_.empty()) throw DomainError("trainer: corpus must be nonempty");
    if (config_.batch_size > samples_.size())
        throw DomainError("trainer: batch size " + std::to_string(config_.batch_size) +
                          " exceeds corpus size " + std::to_string(samples_.size()));
    encoder_ = std::make_unique<DualEncoder>(config_.encoder, config_.seed);
    tau_p_ = Tensor::scalar(std::log(config_.loss.initial_tau), config_.loss.tau_learnable);
    gate_state_.m = config_.m;
    gate_state_.gamma_s = config_.gamma_s;
    gate_state_.gamma_p = config_.gamma_p;
    gate_state_.validate();

    auto params = encoder_->parameters();
    params.push_back({"tau.p", tau_p_});
    OptimConfig optim{config_.lr, config_.weight_decay, config_.beta1, config_.beta2,
                      config_.adam_eps};
    // The temperature parameter is excluded from weight decay: decaying it
    // would pull tau toward 1 regardless of gradients.
    optimizer_ = std::make_unique<AdamW>(std::move(params), optim, std::vector<std::string>{
                                                                       "tau.p"});
}

double Trainer::temperature() const {
    return temperature_value(tau_p_, config_.loss.tau_min).item();
}

StepTelemetry Trainer::run_step(const TripletBatch& batch, std::size_t epoch_index) {
    const std::size_t total_steps = config_.epochs * steps_per_epoch();
    const double lr_t = lr_at(static_cast<std::size_t>(global_step_), total_steps, config_.lr,
                              config_.schedule, config_.pct_start);
    for (const auto& np : optimizer_->params()) {
        Tensor handle = np.value;
        handle.zero_grad();
    }

    StepTelemetry row;
    row.step = global_step_ + 1;
    row.epoch = epoch_index + 1;
    row.lr = lr_t;

    Tape tape;
    Tensor x = encoder_->encode_image(batch.image_features);
    Tensor t = encoder_->encode_text(batch.text_tokens);
    Tensor c = encoder_->encode_text(batch.caption_tokens);
    EmbeddingTriplet triplet = compute_similarities(x, t, c);
    gate_state_.update(triplet);

    WeightSet weights;
    if (config_.mode == TrainMode::Alip) {
        weights = compute_weights(triplet, gate_state_);
    } else {
        weights.w_s.assign(batch.size(), 1.0);
        weights.w_t.assign(batch.size(), 1.0);
        weights.w_c.assign(batch.size(), 1.0);
    }

    Tensor tau = temperature_value(tau_p_, config_.loss.tau_min);
    Tensor loss_value;
    if (config_.mode == TrainMode::Alip) {
        LossOutput out = adaptive_loss(x, t, c, weights, tau, config_.loss);
        row.l_xt = out.l_xt.item();
        row.l_xc = out.l_xc.item();
        row.l_total = out.l_total.item();
        loss_value = out.l_total;
    } else {
        loss_value = info_nce(x, t, tau, config_.loss.reduction);
        row.l_xt = loss_value.item();
        row.l_xc = 0.0;
        row.l_total = row.l_xt;
    }

    auto stats = [](const std::vector<double>& v, double& mean, double& mn, double& mx) {
        mean = 0.0;
        mn = v.front();
        mx = v.front();
        for (double w : v) {
            mean += w;
            mn = std::min(mn, w);
            mx = std::max(mx, w);
        }
        mean /= static_cast<double>(v.size());
    };
    stats(weights.w_s, row.w_s_mean, row.w_s_min, row.w_s_max);
    stats(weights.w_t, row.w_t_mean, row.w_t_min, row.w_t_max);
    stats(weights.w_c, row.w_c_mean, row.w_c_min, row.w_c_max);
    row.h_tc = gate_state_.h_tc;
    row.h_xt = gate_state_.h_xt;
    row.h_xc = gate_state_.h_xc;
    row.tau = tau.item();

    if (!std::isfinite(row.l_total) || !std::isfinite(row.l_xt) || !std::isfinite(row.l_xc))
        throw Error("non-finite loss at step " + std::to_string(row.step) +
                    "; offending telemetry: " + to_csv_row(row));

    tape.backward(loss_value);
    optimizer_->step(lr_t);

    // Keep the temperature parameter inside [log(tau_min), log(1)].
    double& p = tau_p_.data()[0];
    p = std::clamp(p, std::log(config_.loss.tau_min), 0.0);
    ++global_step_;
    return row;
}

std::vector<SampleWeightRecord> Trainer::dump_sample_weights(std::size_t epoch_label) {
    // A full pass in corpus order with the gate statistics frozen; the final
    // short batch is kept so every sample gets a row.
    std::vector<SampleWeightRecord> out;
    out.reserve(samples_.size());
    const GateState frozen = gate_state_;
    for (std::size_t start = 0; start < samples_.size(); start += config_.batch_size) {
        std::size_t count = std::min(config_.batch_size, samples_.size() - start);
        std::vector<std::size_t> indices(count);
        std::iota(indices.begin(), indices.end(), start);
        TripletBatch batch = make_batch(samples_, indices, config_.encoder.max_text_len);
        Tensor x = encoder_->encode_image(batch.image_features);
        Tensor t = encoder_->encode_text(batch.text_tokens);
        Tensor c = encoder_->encode_text(batch.caption_tokens);
        EmbeddingTriplet triplet = compute_similarities(x, t, c);
        WeightSet weights = compute_weights(triplet, frozen);
        for (std::size_t j = 0; j < count; ++j)
            out.push_back(
                {epoch_label, start + j, weights.w_s[j], weights.w_t[j], weights.w_c[j]});
    }
    return out;
}

TrainResult Trainer::train(std::size_t stop_after_epochs) {
    const std::size_t target =
        stop_after_epochs == 0 ? config_.epochs : std::min(stop_after_epochs, config_.epochs);
    TrainResult result;
    while (completed_epochs_ < target) {
        const std::size_t epoch_index = completed_epochs_;
        auto batches = batch_iterator(samples_, config_.batch_size, config_.seed, epoch_index,
                                      config_.encoder.max_text_len);
        for (const auto& batch : batches)
            result.telemetry.push_back(run_step(batch, epoch_index));
        ++completed_epochs_;
        if (log_sample_weights_) {
            auto rows = dump_sample_weights(completed_epochs_);
            result.sample_weights.insert(result.sample_weights.end(), rows.begin(), rows.end());
        }
    }
    return result;
}

// --------------------------------------------------------------------------
// Checkpoints
// --------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[] = "ALIPCKPT";  // followed by a single version digit
constexpr char kCkptVersion = '1';

void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::string& out, std::uint64_t v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_doubles(std::string& out, const std::vector<double>& v) {
    put_u64(out, v.size());
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}
void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

// Bounds-checked reader over a byte range of a buffer.
class Cursor {
public:
    Cursor(const std::string& data, std::size_t pos, std::size_t end)
        : data_(&data), pos_(pos), end_(end) {}

    std::uint8_t read_u8() {
        std::uint8_t v = 0;
        raw(&v, sizeof(v));
        return v;
    }
    std::uint32_t read_u32() {
        std::uint32_t v = 0;
        raw(&v, sizeof(v));
        return v;
    }
    std::uint64_t read_u64() {
        std::uint64_t v = 0;
        raw(&v, sizeof(v));
        return v;
    }
    double read_f64() {
        double v = 0.0;
        raw(&v, sizeof(v));
        return v;
    }
    std::vector<double> read_doubles() {
        std::uint64_t n = read_u64();
        if (n > (end_ - pos_) / sizeof(double)) throw ParseError("checkpoint truncated");
        std::vector<double> v(n);
        raw(v.data(), n * sizeof(double));
        return v;
    }
    std::string read_string() {
        std::uint32_t n = read_u32();
        if (n > end_ - pos_) throw ParseError("checkpoint truncated");
        std::string s = data_->substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string read_rest() {
        std::string s = data_->substr(pos_, end_ - pos_);
        pos_ = end_;
        return s;
    }
    // Carves the next `len` bytes out as a sub-cursor and skips past them.
    Cursor slice(std::uint64_t len) {
        if (len > end_ - pos_) throw ParseError("checkpoint truncated");
        Cursor sub(*data_, pos_, pos_ + static_cast<std::size_t>(len));
        pos_ += static_cast<std::size_t>(len);
        return sub;
    }

private:
    void raw(void* dst, std::size_t n) {
        if (n > end_ - pos_) throw ParseError("checkpoint truncated");
        std::memcpy(dst, data_->data() + pos_, n);
        pos_ += n;
    }

    const std::string* data_;
    std::size_t pos_;
    std::size_t end_;
};

}  // namespace

std::string Trainer::config_fingerprint() const {
    std::ostringstream out;
    const TrainConfig& c = config_;
    out << "epochs=" << c.epochs << "\nbatch_size=" << c.batch_size
        << "\nlr=" << format_double(c.lr) << "\nweight_decay=" << format_double(c.weight_decay)
        << "\nbeta1=" << format_double(c.beta1) << "\nbeta2=" << format_double(c.beta2)
        << "\nadam_eps=" << format_double(c.adam_eps) << "\nschedule=" << to_string(c.schedule)
        << "\npct_start=" << format_double(c.pct_start) << "\nm=" << format_double(c.m)
        << "\ngamma_s=" << format_double(c.gamma_s) << "\ngamma_p=" << format_double(c.gamma_p)
        << "\nseed=" << c.seed << "\nmode=" << to_string(c.mode)
        << "\nloss.initial_tau=" << format_double(c.loss.initial_tau)
        << "\nloss.tau_learnable=" << (c.loss.tau_learnable ? 1 : 0)
        << "\nloss.tau_min=" << format_double(c.loss.tau_min)
        << "\nloss.reduction=" << to_string(c.loss.reduction)
        << "\nloss.enable_w_s=" << (c.loss.enable_w_s ? 1 : 0)
        << "\nloss.enable_w_t=" << (c.loss.enable_w_t ? 1 : 0)
        << "\nloss.enable_w_c=" << (c.loss.enable_w_c ? 1 : 0)
        << "\nencoder.embed_dim=" << c.encoder.embed_dim
        << "\nencoder.vocab_size=" << c.encoder.vocab_size
        << "\nencoder.max_text_len=" << c.encoder.max_text_len
        << "\nencoder.image_feature_dim=" << c.encoder.image_feature_dim
        << "\nencoder.hidden_dim=" << c.encoder.hidden_dim
        << "\nencoder.depth=" << c.encoder.depth << "\nencoder.mode=" << to_string(c.encoder.mode)
        << "\nencoder.heads=" << c.encoder.heads << "\n";
    return out.str();
}

void Trainer::save_checkpoint(const std::string& path) const {
    std::string blob;
    blob.append(kCkptMagic);
    blob.push_back(kCkptVersion);

    auto section = [&](const std::string& payload) {
        put_u64(blob, payload.size());
        blob.append(payload);
    };

    section(config_fingerprint());

    std::string progress;
    put_u64(progress, global_step_);
    put_u64(progress, completed_epochs_);
    section(progress);

    std::string gates;
    gates.push_back(gate_state_.initialized ? '\1' : '\0');
    for (double v : {gate_state_.h_tc, gate_state_.h_xt, gate_state_.h_xc})
        gates.append(reinterpret_cast<const char*>(&v), sizeof(v));
    section(gates);

    std::string tau;
    double p = tau_p_.item();
    tau.append(reinterpret_cast<const char*>(&p), sizeof(p));
    section(tau);

    std::string params;
    auto encoder_params = encoder_->parameters();
    put_u64(params, encoder_params.size());
    for (const auto& np : encoder_params) {
        put_string(params, np.name);
        put_doubles(params, np.value.data());
    }
    section(params);

    std::string optim;
    put_u64(optim, optimizer_->step_count());
    put_u64(optim, optimizer_->params().size());
    for (const auto& np : optimizer_->params()) {
        put_string(optim, np.name);
        const auto& mp = optimizer_->moments(np.name);
        put_doubles(optim, mp.m);
        put_doubles(optim, mp.v);
    }
    section(optim);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("failed while writing '" + path + "'");
}

void Trainer::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string blob = ss.str();

    const std::size_t magic_len = sizeof(kCkptMagic) - 1;
    if (blob.size() < magic_len + 1 || blob.compare(0, magic_len, kCkptMagic) != 0)
        throw ParseError("not a checkpoint file (bad magic)");
    if (blob[magic_len] != kCkptVersion)
        throw ParseError(std::string("unsupported checkpoint version '") + blob[magic_len] +
                         "', expected '" + kCkptVersion + "'");

    Cursor top(blob, magic_len + 1, blob.size());
    auto next_section = [&]() { return top.slice(top.read_u64()); };

    Cursor config_section = next_section();
    if (config_section.read_rest() != config_fingerprint())
        throw Error("checkpoint was written with a different configuration");

    Cursor progress = next_section();
    std::uint64_t loaded_step = progress.read_u64();
    std::uint64_t loaded_epochs = progress.read_u64();

    Cursor gates = next_section();
    GateState gs = gate_state_;
    gs.initialized = gates.read_u8() != 0;
    gs.h_tc = gates.read_f64();
    gs.h_xt = gates.read_f64();
    gs.h_xc = gates.read_f64();

    Cursor tau = next_section();
    double p = tau.read_f64();

    Cursor params = next_section();
    std::uint64_t n_params = params.read_u64();
    auto encoder_params = encoder_->parameters();
    if (n_params != encoder_params.size())
        throw ParseError("checkpoint holds " + std::to_string(n_params) +
                         " parameter tensors, model has " +
                         std::to_string(encoder_params.size()));
    for (std::uint64_t i = 0; i < n_params; ++i) {
        std::string name = params.read_string();
        std::vector<double> data = params.read_doubles();
        Tensor target = encoder_->param(name);
        if (data.size() != target.size())
            throw ParseError("checkpoint parameter '" + name + "' has " +
                             std::to_string(data.size()) + " values, model expects " +
                             std::to_string(target.size()));
        target.data() = std::move(data);
    }

    Cursor optim = next_section();
    std::uint64_t opt_steps = optim.read_u64();
    std::uint64_t n_moment_groups = optim.read_u64();
    if (n_moment_groups != optimizer_->params().size())
        throw ParseError("checkpoint optimizer state does not match the parameter list");
    for (std::uint64_t i = 0; i < n_moment_groups; ++i) {
        std::string name = optim.read_string();
        std::vector<double> m = optim.read_doubles();
        std::vector<double> v = optim.read_doubles();
        optimizer_->set_moments(name, std::move(m), std::move(v));
    }

    gate_state_ = gs;
    tau_p_.data()[0] = p;
    global_step_ = loaded_step;
    completed_epochs_ = static_cast<std::size_t>(loaded_epochs);
    optimizer_->set_step_count(opt_steps);
}

CorpusSplit split_corpus(const std::vector<TripletSample>& samples, double held_out_fraction) {
    if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0))
        throw DomainError("held-out fraction must lie in [0, 1)");
    auto held = static_cast<std::size_t>(
        std::floor(static_cast<double>(samples.size()) * held_out_fraction));
    CorpusSplit split;
    split.train.assign(samples.begin(), samples.end() - static_cast<std::ptrdiff_t>(held));
    split.held_out.assign(samples.end() - static_cast<std::ptrdiff_t>(held), samples.end());
    return split;
}

}  // namespace alip
