#include "alip/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "alip/corpus.hpp"
#include "alip/error.hpp"
#include "alip/evaluation.hpp"
#include "alip/finite_diff.hpp"
#include "alip/serialize.hpp"
#include "alip/trainer.hpp"

namespace alip::cli {

namespace {

// ---------------------------------------------------------------------------
// shared training flag set
// ---------------------------------------------------------------------------

// Enum-valued settings stage through strings; everything numeric binds
// straight into the config structs so help text shows the real defaults.
struct TrainCli {
    TrainConfig cfg;
    std::string corpus_path;
    std::string config_path;
    std::string mode = "alip";
    std::string schedule = "one_cycle";
    std::string encoder_mode = "mlp";
    bool disable_ws = false;
    bool disable_wt = false;
    bool disable_wc = false;
};

constexpr const char* kConfigHelp =
    "flat key=value file; keys are the long flag names, explicit flags override it";

std::string strip_ws(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

// Expands every `--config <file>` into `--key=value` tokens spliced in right
// after it, so the keys land on the same subcommand. A key already given
// explicitly (or by an earlier config line) is skipped, which is what gives
// the command line precedence over the file.
std::vector<std::string> expand_config_args(const std::vector<std::string>& args) {
    std::set<std::string> seen;
    for (const auto& a : args)
        if (a.rfind("--", 0) == 0) seen.insert(a.substr(0, a.find('=')));

    std::vector<std::string> out;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        out.push_back(a);
        std::string path;
        if (a == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            out.push_back(args[++i]);
        } else if (a.rfind("--config=", 0) == 0) {
            path = a.substr(9);
        }
        if (path.empty()) continue;

        std::ifstream in(path);
        if (!in) throw IoError("cannot open '" + path + "' for reading");
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            line = strip_ws(line);
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            const std::string key = eq == std::string::npos ? "" : strip_ws(line.substr(0, eq));
            if (key.empty())
                throw ParseError(path + " line " + std::to_string(line_no) +
                                 ": expected key=value");
            const std::string flag = "--" + key;
            if (!seen.insert(flag).second) continue;
            out.push_back(flag + "=" + strip_ws(line.substr(eq + 1)));
        }
    }
    return out;
}

void add_train_flags(CLI::App* sub, TrainCli& o) {
    sub->option_defaults()->always_capture_default();
    sub->add_option("--corpus", o.corpus_path, "triplet corpus file")->required();
    sub->add_option("--epochs", o.cfg.epochs, "training epochs");
    sub->add_option("--batch-size", o.cfg.batch_size, "samples per optimizer step");
    sub->add_option("--lr", o.cfg.lr, "peak learning rate");
    sub->add_option("--weight-decay", o.cfg.weight_decay, "decoupled weight decay");
    sub->add_option("--schedule", o.schedule, "learning-rate schedule")
        ->check(CLI::IsMember({"constant", "one_cycle"}));
    sub->add_option("--pct-start", o.cfg.pct_start, "warmup fraction of the one-cycle schedule");
    sub->add_option("--gamma-s", o.cfg.gamma_s, "language-consistency gate exponent");
    sub->add_option("--gamma-p", o.cfg.gamma_p, "description-consistency gate exponent");
    sub->add_option("--momentum-m", o.cfg.m, "momentum of the historical similarity averages");
    sub->add_option("--tau-init", o.cfg.loss.initial_tau, "initial softmax temperature");
    sub->add_option("--mode", o.mode, "training objective")
        ->check(CLI::IsMember({"alip", "clip_baseline"}));
    sub->add_option("--seed", o.cfg.seed, "master random seed");
    sub->add_option("--embed-dim", o.cfg.encoder.embed_dim, "joint embedding dimension");
    sub->add_option("--hidden-dim", o.cfg.encoder.hidden_dim, "encoder hidden width");
    sub->add_option("--depth", o.cfg.encoder.depth, "encoder depth");
    sub->add_option("--max-text-len", o.cfg.encoder.max_text_len,
                    "token sequences are padded or truncated to this length");
    sub->add_option("--encoder-mode", o.encoder_mode, "encoder architecture")
        ->check(CLI::IsMember({"mlp", "tiny_transformer"}));
    sub->add_option("--heads", o.cfg.encoder.heads, "attention heads (tiny_transformer only)");
    sub->add_flag("--disable-ws", o.disable_ws, "hold the language-consistency weight at one");
    sub->add_flag("--disable-wt", o.disable_wt, "hold the text description weight at one");
    sub->add_flag("--disable-wc", o.disable_wc, "hold the caption description weight at one");
    sub->add_option("--config", o.config_path, kConfigHelp);
}

// Resolves the staged strings and wires the encoder's input contract to the
// corpus file header, so a model always matches the data it trains on.
TrainConfig resolve(const TrainCli& o, const CorpusFile& file) {
    TrainConfig cfg = o.cfg;
    cfg.mode = train_mode_from_string(o.mode);
    cfg.schedule = schedule_from_string(o.schedule);
    cfg.encoder.mode = encoder_mode_from_string(o.encoder_mode);
    cfg.loss.enable_w_s = !o.disable_ws;
    cfg.loss.enable_w_t = !o.disable_wt;
    cfg.loss.enable_w_c = !o.disable_wc;
    cfg.encoder.image_feature_dim = file.image_feature_dim;
    cfg.encoder.vocab_size = file.vocab_size;
    return cfg;
}

// ---------------------------------------------------------------------------
// gradient check
// ---------------------------------------------------------------------------

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t n_coords = 0;
};

// Compares backward() against central differences on a small two-tower setup.
// The gate weights are computed once at the unperturbed parameters and then
// held fixed — they enter the objective as constants, exactly as in training.
GradCheckResult run_grad_check(std::size_t batch_size, std::uint64_t seed) {
    CorpusConfig cc;
    cc.n_samples = batch_size;
    cc.n_concepts = 8;
    cc.image_feature_dim = 8;
    cc.vocab_size = 64;
    cc.text_len_min = 4;
    cc.text_len_max = 8;
    cc.caption_len_min = 2;
    cc.caption_len_max = 5;
    cc.seed = seed;
    auto samples = generate_corpus(cc);

    EncoderConfig ec;
    ec.embed_dim = 16;
    ec.vocab_size = 64;
    ec.max_text_len = 8;
    ec.image_feature_dim = 8;
    ec.hidden_dim = 16;
    ec.depth = 1;
    ec.mode = EncoderMode::Mlp;
    DualEncoder enc(ec, seed);

    std::vector<std::size_t> indices(samples.size());
    std::iota(indices.begin(), indices.end(), 0);
    TripletBatch batch = make_batch(samples, indices, ec.max_text_len);

    Tensor tau_p = Tensor::scalar(std::log(0.07), true);
    LossConfig loss_cfg;

    GateState gates;
    WeightSet weights;
    {
        EmbeddingTriplet triplet =
            compute_similarities(enc.encode_image(batch.image_features),
                                 enc.encode_text(batch.text_tokens),
                                 enc.encode_text(batch.caption_tokens));
        gates.update(triplet);
        weights = compute_weights(triplet, gates);
    }

    auto objective = [&]() {
        Tensor x = enc.encode_image(batch.image_features);
        Tensor t = enc.encode_text(batch.text_tokens);
        Tensor c = enc.encode_text(batch.caption_tokens);
        Tensor tau = temperature_value(tau_p, loss_cfg.tau_min);
        return adaptive_loss(x, t, c, weights, tau, loss_cfg).l_total.item();
    };

    auto params = enc.parameters();
    params.push_back({"tau.p", tau_p});
    for (const auto& np : params) {
        Tensor handle = np.value;
        handle.zero_grad();
    }
    {
        Tape tape;
        Tensor x = enc.encode_image(batch.image_features);
        Tensor t = enc.encode_text(batch.text_tokens);
        Tensor c = enc.encode_text(batch.caption_tokens);
        Tensor tau = temperature_value(tau_p, loss_cfg.tau_min);
        LossOutput out = adaptive_loss(x, t, c, weights, tau, loss_cfg);
        tape.backward(out.l_total);
    }

    GradCheckResult result;
    for (const auto& np : params) {
        Tensor value = np.value;
        std::vector<double> numeric = finite_difference_grad(objective, value);
        std::vector<double> analytic = value.grad();
        if (analytic.empty()) analytic.assign(numeric.size(), 0.0);
        result.max_rel_err = std::max(result.max_rel_err, max_grad_rel_err(analytic, numeric));
        result.n_coords += numeric.size();
    }
    return result;
}

std::size_t count_category(const std::vector<TripletSample>& samples, NoiseCategory category) {
    std::size_t n = 0;
    for (const auto& s : samples)
        if (s.category == category) ++n;
    return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args) {
    int exit_code = 0;

    CLI::App app{"adaptive bi-path contrastive training on synthetic noisy triplets", "alip"};
    app.require_subcommand(1);

    // ---- gen-corpus ----
    CorpusConfig gen_cfg;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic noisy triplet corpus");
    gen->option_defaults()->always_capture_default();
    gen->add_option("--n", gen_cfg.n_samples, "number of triplets")->required();
    gen->add_option("--n-concepts", gen_cfg.n_concepts, "latent concepts");
    gen->add_option("--image-dim", gen_cfg.image_feature_dim, "image feature dimension");
    gen->add_option("--vocab", gen_cfg.vocab_size, "token vocabulary size (id 0 is padding)");
    gen->add_option("--text-len-min", gen_cfg.text_len_min, "shortest text");
    gen->add_option("--text-len-max", gen_cfg.text_len_max, "longest text");
    gen->add_option("--caption-len-min", gen_cfg.caption_len_min, "shortest caption");
    gen->add_option("--caption-len-max", gen_cfg.caption_len_max, "longest caption");
    gen->add_option("--p-both-good", gen_cfg.category_probs[0], "clean fraction");
    gen->add_option("--p-text-bad", gen_cfg.category_probs[1], "mismatched-text fraction");
    gen->add_option("--p-caption-bad", gen_cfg.category_probs[2], "mismatched-caption fraction");
    gen->add_option("--p-both-bad", gen_cfg.category_probs[3], "fully mismatched fraction");
    gen->add_option("--sigma", gen_cfg.image_noise_sigma, "image feature noise");
    gen->add_option("--seed", gen_cfg.seed, "master random seed");
    gen->add_option("--out", gen_out, "output corpus file")->required();
    std::string gen_config;
    gen->add_option("--config", gen_config, kConfigHelp);
    gen->callback([&]() {
        auto samples = generate_corpus(gen_cfg);
        write_corpus(samples, gen_cfg.image_feature_dim, gen_cfg.vocab_size, gen_out);
        std::cout << "wrote " << samples.size() << " triplets to " << gen_out << " (";
        for (std::size_t c = 0; c < kNumNoiseCategories; ++c) {
            if (c) std::cout << ", ";
            std::cout << count_category(samples, static_cast<NoiseCategory>(c)) << ' '
                      << to_string(static_cast<NoiseCategory>(c));
        }
        std::cout << ")\n";
    });

    // ---- train ----
    TrainCli train_cli;
    std::string train_out = "telemetry.csv";
    std::string train_weights_out = "sample_weights.csv";
    std::string train_checkpoint;
    std::string train_resume;
    bool train_log_weights = false;
    std::size_t train_stop = 0;
    auto* train = app.add_subcommand("train", "train a model on the first 90% of a corpus");
    add_train_flags(train, train_cli);
    train->add_option("--stop-after-epochs", train_stop,
                      "pause once this many total epochs are done (0 = full horizon); the "
                      "schedule still spans --epochs, so a later --resume run can finish it");
    train->add_option("--out", train_out, "telemetry CSV path");
    train->add_flag("--log-sample-weights", train_log_weights,
                    "dump per-sample gate weights at every epoch boundary");
    train->add_option("--sample-weights-out", train_weights_out,
                      "per-sample weight CSV path (with --log-sample-weights)");
    train->add_option("--checkpoint", train_checkpoint, "write the final model state here");
    train->add_option("--resume", train_resume,
                      "continue from this snapshot; telemetry is appended to --out");
    train->callback([&]() {
        CorpusFile file = read_corpus(train_cli.corpus_path);
        TrainConfig cfg = resolve(train_cli, file);
        CorpusSplit split = split_corpus(file.samples, 0.1);
        Trainer trainer(split.train, cfg);
        if (!train_resume.empty()) trainer.load_checkpoint(train_resume);
        trainer.log_sample_weights(train_log_weights);
        TrainResult result = trainer.train(train_stop);
        if (train_resume.empty())
            write_telemetry_csv(result.telemetry, train_out);
        else
            append_telemetry_csv(result.telemetry, train_out);
        if (train_log_weights) write_sample_weights_csv(result.sample_weights, train_weights_out);
        if (!train_checkpoint.empty()) trainer.save_checkpoint(train_checkpoint);

        std::cout << "trained " << to_string(cfg.mode) << " on " << split.train.size()
                  << " samples for " << result.telemetry.size() << " steps ("
                  << trainer.completed_epochs() << '/' << cfg.epochs << " epochs done)";
        if (!result.telemetry.empty())
            std::cout << "; final L_total = " << format_double(result.telemetry.back().l_total);
        std::cout << "\ntelemetry -> " << train_out << '\n';
        if (train_log_weights) std::cout << "sample weights -> " << train_weights_out << '\n';
        if (!train_checkpoint.empty()) std::cout << "checkpoint -> " << train_checkpoint << '\n';
    });

    // ---- eval-retrieval ----
    TrainCli eval_cli;
    std::string eval_checkpoint;
    std::string eval_out = "retrieval.csv";
    auto* eval = app.add_subcommand(
        "eval-retrieval",
        "recall@K on the clean tail of a corpus; pass the same flags the model trained with");
    add_train_flags(eval, eval_cli);
    eval->add_option("--checkpoint", eval_checkpoint, "trained model snapshot")->required();
    eval->add_option("--out", eval_out, "report CSV path");
    eval->callback([&]() {
        CorpusFile file = read_corpus(eval_cli.corpus_path);
        TrainConfig cfg = resolve(eval_cli, file);
        CorpusSplit split = split_corpus(file.samples, 0.1);
        Trainer trainer(split.train, cfg);
        trainer.load_checkpoint(eval_checkpoint);
        auto clean = filter_clean(split.held_out);
        RetrievalResult result = retrieval_eval(trainer.encoder(), clean);
        write_retrieval_csv(result, eval_out);
        for (const RetrievalReport* report : {&result.i2t, &result.t2i}) {
            std::cout << to_string(report->direction) << ':';
            for (const auto& [k, recall] : report->recall_at)
                std::cout << " R@" << k << " = " << format_double(recall);
            std::cout << " (" << report->n_queries << " queries)\n";
        }
        std::cout << "report -> " << eval_out << '\n';
    });

    // ---- analyze-weights ----
    std::string an_weights = "sample_weights.csv";
    std::string an_corpus;
    std::string an_out = "weight_dynamics.csv";
    auto* analyze = app.add_subcommand("analyze-weights",
                                       "per-epoch gate-weight means split by noise category");
    analyze->option_defaults()->always_capture_default();
    analyze->add_option("--weights", an_weights, "per-sample weight dump from training");
    analyze->add_option("--corpus", an_corpus, "corpus the model trained on")->required();
    analyze->add_option("--out", an_out, "report CSV path");
    std::string an_config;
    analyze->add_option("--config", an_config, kConfigHelp);
    analyze->callback([&]() {
        auto records = read_sample_weights_csv(an_weights);
        CorpusFile file = read_corpus(an_corpus);
        CorpusSplit split = split_corpus(file.samples, 0.1);
        WeightDynamicsReport report = weight_dynamics(records, split.train);
        write_weight_dynamics_csv(report, an_out);
        std::cout << "analyzed " << records.size() << " weight records over "
                  << report.epochs.size() << " epochs\n";
        if (!report.epochs.empty()) {
            const auto& last = report.epochs.back();
            std::cout << "final epoch " << last.epoch << " mean W_s:";
            for (std::size_t c = 0; c < kNumNoiseCategories; ++c)
                if (last.by_category[c].present)
                    std::cout << ' ' << to_string(static_cast<NoiseCategory>(c)) << " = "
                              << format_double(last.by_category[c].w_s);
            std::cout << '\n';
        }
        std::cout << "report -> " << an_out << '\n';
    });

    // ---- grad-check ----
    std::size_t gc_batch = 4;
    std::uint64_t gc_seed = 0;
    auto* grad = app.add_subcommand("grad-check",
                                    "compare analytic gradients against central differences");
    grad->option_defaults()->always_capture_default();
    grad->add_option("--batch", gc_batch, "batch size of the probe")->check(CLI::Range(2, 64));
    grad->add_option("--seed", gc_seed, "master random seed");
    grad->callback([&]() {
        GradCheckResult result = run_grad_check(gc_batch, gc_seed);
        std::cout << "max relative error = " << format_double(result.max_rel_err) << " over "
                  << result.n_coords << " parameter coordinates\n";
        exit_code = result.max_rel_err <= 1e-4 ? 0 : 1;
    });

    // ---- sweep-gamma ----
    TrainCli sweep_cli;
    std::vector<double> sweep_gs = {2.0};
    std::vector<double> sweep_gp = {2.0};
    std::string sweep_out = "sweep.csv";
    auto* sweep = app.add_subcommand(
        "sweep-gamma", "train once per gate-exponent grid cell and report retrieval recall@1");
    add_train_flags(sweep, sweep_cli);
    sweep->add_option("--gamma-s-grid", sweep_gs, "language-gate exponents to sweep")
        ->delimiter(',');
    sweep->add_option("--gamma-p-grid", sweep_gp, "description-gate exponents to sweep")
        ->delimiter(',');
    sweep->add_option("--out", sweep_out, "sweep table CSV path");
    sweep->callback([&]() {
        CorpusFile file = read_corpus(sweep_cli.corpus_path);
        TrainConfig cfg = resolve(sweep_cli, file);
        auto cells = gamma_sweep(file.samples, cfg, sweep_gs, sweep_gp);
        write_sweep_csv(cells, sweep_out);
        const SweepCell* best = &cells.front();
        for (const auto& cell : cells)
            if (cell.i2t_r1 > best->i2t_r1) best = &cell;
        std::cout << cells.size() << " cells swept; best i2t R@1 = "
                  << format_double(best->i2t_r1) << " at gamma_s = "
                  << format_double(best->gamma_s) << ", gamma_p = "
                  << format_double(best->gamma_p) << '\n';
        std::cout << "table -> " << sweep_out << '\n';
    });

    try {
        std::vector<std::string> expanded = expand_config_args(args);
        std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);  // prints contextual help or the failure message
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return exit_code;
}

}  // namespace alip::cli
