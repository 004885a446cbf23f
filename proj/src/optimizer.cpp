#include "alip/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace alip {

Schedule schedule_from_string(const std::string& name) {
    if (name == "constant") return Schedule::Constant;
    if (name == "one_cycle") return Schedule::OneCycle;
    throw DomainError("unknown schedule '" + name + "' (expected constant or one_cycle)");
}

const char* to_string(Schedule schedule) {
    return schedule == Schedule::Constant ? "constant" : "one_cycle";
}

void OptimConfig::validate() const {
    if (!(lr > 0.0)) throw DomainError("optimizer config: lr must be positive");
    if (!(weight_decay >= 0.0))
        throw DomainError("optimizer config: weight_decay must be non-negative");
    if (!(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0))
        throw DomainError("optimizer config: betas must satisfy 0 < beta1 < beta2 < 1");
    if (!(eps > 0.0)) throw DomainError("optimizer config: eps must be positive");
}

namespace {
constexpr double kInitialLrDiv = 25.0;
constexpr double kFinalLrDiv = 1e4;
}  // namespace

double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, Schedule schedule,
             double pct_start) {
    if (total_steps == 0) throw DomainError("lr_at: total_steps must be positive");
    if (step >= total_steps)
        throw DomainError("lr_at: step " + std::to_string(step) + " outside run of " +
                          std::to_string(total_steps) + " steps");
    if (schedule == Schedule::Constant) return peak_lr;
    if (!(pct_start > 0.0 && pct_start < 1.0))
        throw DomainError("lr_at: pct_start must lie in (0, 1)");

    const double start_lr = peak_lr / kInitialLrDiv;
    const double floor_lr = peak_lr / kFinalLrDiv;
    const double warm = pct_start * static_cast<double>(total_steps);
    const double last = static_cast<double>(total_steps - 1);
    const double s = static_cast<double>(step);

    if (s <= warm) return start_lr + (peak_lr - start_lr) * (s / warm);

    const double denom = last - warm;
    double progress = denom > 0.0 ? (s - warm) / denom : 1.0;
    progress = std::clamp(progress, 0.0, 1.0);
    return floor_lr + (peak_lr - floor_lr) * (1.0 + std::cos(M_PI * progress)) / 2.0;
}

AdamW::AdamW(std::vector<NamedParam> params, OptimConfig config, std::vector<std::string> no_decay)
    : params_(std::move(params)), config_(config) {
    config_.validate();
    moments_.reserve(params_.size());
    decay_enabled_.reserve(params_.size());
    for (const auto& p : params_) {
        MomentPair mp;
        mp.m.assign(p.value.size(), 0.0);
        mp.v.assign(p.value.size(), 0.0);
        moments_.push_back(std::move(mp));
        bool excluded = std::find(no_decay.begin(), no_decay.end(), p.name) != no_decay.end();
        decay_enabled_.push_back(!excluded);
    }
    for (const auto& name : no_decay) index_of(name);  // reject unknown names early
}

std::size_t AdamW::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw Error("unknown parameter group '" + name + "'");
}

const AdamW::MomentPair& AdamW::moments(const std::string& name) const {
    return moments_[index_of(name)];
}

void AdamW::set_moments(const std::string& name, std::vector<double> m, std::vector<double> v) {
    std::size_t i = index_of(name);
    if (m.size() != params_[i].value.size() || v.size() != params_[i].value.size())
        throw ShapeError("moment buffers for '" + name + "' do not match the parameter size");
    moments_[i].m = std::move(m);
    moments_[i].v = std::move(v);
}

void AdamW::step(double lr_t) {
    if (!(lr_t >= 0.0) || !std::isfinite(lr_t))
        throw DomainError("optimizer step: learning rate must be finite and non-negative");
    ++step_count_;
    const auto t = static_cast<double>(step_count_);
    const double bias1 = 1.0 - std::pow(config_.beta1, t);
    const double bias2 = 1.0 - std::pow(config_.beta2, t);

    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].value;
        const std::vector<double>& g = p.grad();
        if (!g.empty()) {
            for (double gv : g) {
                if (!std::isfinite(gv))
                    throw Error("non-finite gradient in parameter group '" + params_[i].name +
                                "'");
            }
        }
        std::vector<double>& data = p.data();
        std::vector<double>& m = moments_[i].m;
        std::vector<double>& v = moments_[i].v;
        const double decay = decay_enabled_[i] ? config_.weight_decay : 0.0;
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double gv = g.empty() ? 0.0 : g[j];
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gv;
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gv * gv;
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            const double update = m_hat / (std::sqrt(v_hat) + config_.eps);
            data[j] = data[j] - lr_t * update - lr_t * decay * data[j];
        }
    }
}

}  // namespace alip
