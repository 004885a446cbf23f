#include "alip/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "alip/error.hpp"
#include "alip/serialize.hpp"

namespace alip {

// ---------------------------------------------------------------------------
// retrieval
// ---------------------------------------------------------------------------

const char* to_string(RetrievalDirection direction) {
    return direction == RetrievalDirection::ImageToText ? "i2t" : "t2i";
}

std::map<std::size_t, double> recall_from_scores(const std::vector<std::vector<double>>& scores,
                                                 const std::vector<std::size_t>& ks) {
    if (scores.empty()) throw DomainError("recall needs at least one query");
    if (ks.empty()) throw DomainError("recall needs at least one K");
    const std::size_t n = scores.size();
    for (const auto& row : scores)
        if (row.size() < n)
            throw ShapeError("score matrix needs a candidate column for every query");

    // rank of the true candidate = number of candidates strictly ahead of it,
    // where equal scores at a lower index count as ahead (deterministic ties)
    std::vector<std::size_t> ranks(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = scores[i];
        const double truth = row[i];
        std::size_t ahead = 0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j == i) continue;
            if (row[j] > truth || (row[j] == truth && j < i)) ++ahead;
        }
        ranks[i] = ahead;
    }

    std::map<std::size_t, double> recall;
    for (std::size_t k : ks) {
        if (k == 0) throw DomainError("recall@0 is undefined");
        std::size_t hits = 0;
        for (std::size_t rank : ranks)
            if (rank < k) ++hits;
        recall[k] = static_cast<double>(hits) / static_cast<double>(n);
    }
    return recall;
}

namespace {

std::vector<std::vector<double>> score_matrix(const Tensor& queries, const Tensor& candidates) {
    const std::size_t n = queries.shape()[0];
    const std::size_t m = candidates.shape()[0];
    const std::size_t d = queries.shape()[1];
    const auto& q = queries.data();
    const auto& c = candidates.data();
    std::vector<std::vector<double>> scores(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += q[i * d + k] * c[j * d + k];
            scores[i][j] = dot;
        }
    return scores;
}

}  // namespace

RetrievalResult retrieval_eval(const DualEncoder& model,
                               const std::vector<TripletSample>& held_out,
                               const std::vector<std::size_t>& ks) {
    if (held_out.empty()) throw DomainError("retrieval needs a nonempty held-out set");
    std::vector<std::size_t> indices(held_out.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    TripletBatch batch = make_batch(held_out, indices, model.config().max_text_len);

    // No tape is active, so these are pure inference passes.
    Tensor x = model.encode_image(batch.image_features);
    Tensor t = model.encode_text(batch.text_tokens);

    RetrievalResult result;
    result.i2t.direction = RetrievalDirection::ImageToText;
    result.i2t.n_queries = held_out.size();
    result.i2t.recall_at = recall_from_scores(score_matrix(x, t), ks);
    result.t2i.direction = RetrievalDirection::TextToImage;
    result.t2i.n_queries = held_out.size();
    result.t2i.recall_at = recall_from_scores(score_matrix(t, x), ks);
    return result;
}

std::vector<TripletSample> filter_clean(const std::vector<TripletSample>& samples) {
    std::vector<TripletSample> clean;
    std::copy_if(samples.begin(), samples.end(), std::back_inserter(clean),
                 [](const TripletSample& s) { return s.category == NoiseCategory::BothGood; });
    return clean;
}

void write_retrieval_csv(const RetrievalResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "direction,K,recall,n_queries\n";
    for (const RetrievalReport* report : {&result.i2t, &result.t2i})
        for (const auto& [k, recall] : report->recall_at)
            out << to_string(report->direction) << ',' << k << ',' << format_double(recall) << ','
                << report->n_queries << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// weight dynamics
// ---------------------------------------------------------------------------

WeightDynamicsReport weight_dynamics(const std::vector<SampleWeightRecord>& records,
                                     const std::vector<TripletSample>& samples) {
    if (records.empty())
        throw Error(
            "no per-sample weight dumps found; "
            "run training with --log-sample-weights to produce them");
    if (samples.empty()) throw DomainError("weight dynamics needs the corpus the run trained on");

    struct Accumulator {
        std::size_t count = 0;
        double w_s = 0.0, w_t = 0.0, w_c = 0.0;
        void add(const SampleWeightRecord& r) {
            ++count;
            w_s += r.w_s;
            w_t += r.w_t;
            w_c += r.w_c;
        }
        WeightMean mean() const {
            WeightMean m;
            if (count == 0) return m;  // stays absent
            m.present = true;
            m.count = count;
            const double n = static_cast<double>(count);
            m.w_s = w_s / n;
            m.w_t = w_t / n;
            m.w_c = w_c / n;
            return m;
        }
    };
    struct EpochAccumulator {
        Accumulator overall;
        std::array<Accumulator, kNumNoiseCategories> by_category;
    };

    std::map<std::size_t, EpochAccumulator> epochs;
    for (const auto& r : records) {
        if (r.sample_index >= samples.size())
            throw DomainError("weight record refers to sample " + std::to_string(r.sample_index) +
                              " but the corpus has only " + std::to_string(samples.size()) +
                              " samples");
        EpochAccumulator& acc = epochs[r.epoch];
        acc.overall.add(r);
        acc.by_category[static_cast<std::size_t>(samples[r.sample_index].category)].add(r);
    }

    WeightDynamicsReport report;
    for (const auto& [epoch, acc] : epochs) {
        EpochWeightSummary summary;
        summary.epoch = epoch;
        summary.overall = acc.overall.mean();
        for (std::size_t c = 0; c < kNumNoiseCategories; ++c)
            summary.by_category[c] = acc.by_category[c].mean();
        report.epochs.push_back(summary);
    }
    return report;
}

void write_weight_dynamics_csv(const WeightDynamicsReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "epoch,category,count,W_s_mean,W_t_mean,W_c_mean\n";
    auto emit = [&out](std::size_t epoch, const char* label, const WeightMean& m) {
        out << epoch << ',' << label << ',' << m.count << ',' << format_double(m.w_s) << ','
            << format_double(m.w_t) << ',' << format_double(m.w_c) << '\n';
    };
    for (const auto& e : report.epochs) {
        emit(e.epoch, "overall", e.overall);
        for (std::size_t c = 0; c < kNumNoiseCategories; ++c)
            if (e.by_category[c].present)
                emit(e.epoch, to_string(static_cast<NoiseCategory>(c)), e.by_category[c]);
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// gamma sweep
// ---------------------------------------------------------------------------

std::size_t alip_threads() {
    const char* raw = std::getenv("ALIP_THREADS");
    if (raw == nullptr || *raw == '\0') return 1;
    std::uint64_t value = 0;
    if (!try_parse_u64(raw, value) || value == 0)
        throw DomainError("ALIP_THREADS must be a positive integer, got '" + std::string(raw) +
                          "'");
    return static_cast<std::size_t>(value);
}

std::vector<SweepCell> gamma_sweep(const std::vector<TripletSample>& corpus,
                                   const TrainConfig& base,
                                   const std::vector<double>& gamma_s_grid,
                                   const std::vector<double>& gamma_p_grid) {
    if (gamma_s_grid.empty() || gamma_p_grid.empty())
        throw DomainError("gamma sweep needs nonempty grids for both exponents");

    std::vector<SweepCell> cells;
    cells.reserve(gamma_s_grid.size() * gamma_p_grid.size());
    for (double gs : gamma_s_grid)
        for (double gp : gamma_p_grid) cells.push_back({gs, gp, 0.0, 0.0});

    CorpusSplit split = split_corpus(corpus, 0.1);
    std::vector<TripletSample> clean = filter_clean(split.held_out);

    auto run_cell = [&](SweepCell& cell) {
        TrainConfig cfg = base;
        cfg.gamma_s = cell.gamma_s;
        cfg.gamma_p = cell.gamma_p;
        Trainer trainer(split.train, cfg);
        trainer.train();
        RetrievalResult result = retrieval_eval(trainer.encoder(), clean, {1});
        cell.i2t_r1 = result.i2t.recall_at.at(1);
        cell.t2i_r1 = result.t2i.recall_at.at(1);
    };

    const std::size_t workers = std::min(alip_threads(), cells.size());
    if (workers <= 1) {
        for (auto& cell : cells) run_cell(cell);
    } else {
        std::atomic<std::size_t> next{0};
        std::mutex error_mutex;
        std::exception_ptr first_error;
        auto worker = [&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= cells.size()) return;
                try {
                    run_cell(cells[i]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& thread : pool) thread.join();
        if (first_error) std::rethrow_exception(first_error);
    }
    return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "gamma_s,gamma_p,i2t_r1,t2i_r1\n";
    for (const auto& cell : cells)
        out << format_double(cell.gamma_s) << ',' << format_double(cell.gamma_p) << ','
            << format_double(cell.i2t_r1) << ',' << format_double(cell.t2i_r1) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace alip
