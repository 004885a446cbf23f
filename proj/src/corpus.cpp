#include "alip/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "alip/encoder.hpp"
#include "alip/rng.hpp"

namespace alip {

namespace {

constexpr std::uint64_t kLatentStream = 0x1A7E17;
constexpr std::uint64_t kCategoryStream = 0xCA7E60;
constexpr std::uint64_t kSampleStream = 0x5A3B1E;
constexpr std::uint64_t kBatchStream = 0xBA7C4;

const char* const kCategoryNames[kNumNoiseCategories] = {
    "both_good",
    "text_bad_caption_good",
    "text_good_caption_bad",
    "both_bad",
};

}  // namespace

const char* to_string(NoiseCategory category) {
    auto idx = static_cast<std::size_t>(category);
    if (idx >= kNumNoiseCategories) throw DomainError("invalid noise category value");
    return kCategoryNames[idx];
}

NoiseCategory noise_category_from_string(const std::string& name) {
    for (std::size_t i = 0; i < kNumNoiseCategories; ++i)
        if (name == kCategoryNames[i]) return static_cast<NoiseCategory>(i);
    throw DomainError("unknown noise category '" + name + "'");
}

void CorpusConfig::validate() const {
    if (n_samples == 0) throw DomainError("corpus config: n_samples must be positive");
    if (n_concepts == 0) throw DomainError("corpus config: n_concepts must be positive");
    if (image_feature_dim == 0)
        throw DomainError("corpus config: image_feature_dim must be positive");
    if (vocab_size < 2) throw DomainError("corpus config: vocab_size must be at least 2");
    if (text_len_min == 0 || text_len_min > text_len_max)
        throw DomainError("corpus config: text length range must satisfy 1 <= min <= max");
    if (caption_len_min == 0 || caption_len_min > caption_len_max)
        throw DomainError("corpus config: caption length range must satisfy 1 <= min <= max");
    if (caption_len_max > text_len_max)
        throw DomainError(
            "corpus config: caption length upper bound must not exceed the text upper bound");
    double sum = 0.0;
    for (double p : category_probs) {
        if (!(p >= 0.0)) throw DomainError("corpus config: category probabilities must be >= 0");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw DomainError("corpus config: category probabilities must sum to 1");
    if (!(image_noise_sigma >= 0.0))
        throw DomainError("corpus config: image_noise_sigma must be >= 0");
    if (static_cast<double>(n_concepts) > static_cast<double>(vocab_size) / 4.0)
        throw DomainError("corpus config: sub-vocabularies too small (" +
                          std::to_string(n_concepts) + " concepts over vocab of " +
                          std::to_string(vocab_size) + ")");
    double bad_mass = category_probs[1] + category_probs[2] + category_probs[3];
    if (bad_mass > 0.0 && n_concepts < 2)
        throw DomainError(
            "corpus config: mismatched categories need at least 2 concepts to draw from");
}

SubVocab concept_sub_vocab(std::size_t vocab_size, std::size_t n_concepts, std::size_t concept_id) {
    if (concept_id >= n_concepts) throw DomainError("concept index out of range");
    // Token id 0 is reserved for padding; the remaining ids are split evenly.
    auto width = static_cast<std::int64_t>((vocab_size - 1) / n_concepts);
    auto begin = 1 + static_cast<std::int64_t>(concept_id) * width;
    return SubVocab{begin, begin + width};
}

std::array<std::size_t, kNumNoiseCategories> apportion_counts(
    std::size_t n, const std::array<double, kNumNoiseCategories>& probs) {
    std::array<std::size_t, kNumNoiseCategories> counts{};
    std::array<double, kNumNoiseCategories> fracs{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < kNumNoiseCategories; ++i) {
        double quota = static_cast<double>(n) * probs[i];
        counts[i] = static_cast<std::size_t>(std::floor(quota));
        fracs[i] = quota - std::floor(quota);
        assigned += counts[i];
    }
    std::array<std::size_t, kNumNoiseCategories> order = {0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fracs[a] > fracs[b]; });
    for (std::size_t i = 0; assigned < n; ++i) {
        ++counts[order[i % kNumNoiseCategories]];
        ++assigned;
    }
    return counts;
}

std::vector<TripletSample> generate_corpus(const CorpusConfig& config) {
    config.validate();
    const std::size_t n_concepts = config.n_concepts;
    const std::size_t dim = config.image_feature_dim;

    // Unit latent direction per concept.
    Rng latent_rng(derive_seed(config.seed, kLatentStream));
    std::vector<std::vector<double>> latents(n_concepts, std::vector<double>(dim));
    for (auto& z : latents) {
        double norm_sq = 0.0;
        for (double& v : z) {
            v = latent_rng.normal();
            norm_sq += v * v;
        }
        double norm = std::sqrt(norm_sq);
        if (norm < 1e-12) {
            std::fill(z.begin(), z.end(), 0.0);
            z[0] = 1.0;
        } else {
            for (double& v : z) v /= norm;
        }
    }

    // Exact category counts, then a uniform shuffle of the label sequence.
    auto counts = apportion_counts(config.n_samples, config.category_probs);
    std::vector<NoiseCategory> labels;
    labels.reserve(config.n_samples);
    for (std::size_t c = 0; c < kNumNoiseCategories; ++c)
        labels.insert(labels.end(), counts[c], static_cast<NoiseCategory>(c));
    Rng shuffle_rng(derive_seed(config.seed, kCategoryStream));
    for (std::size_t i = labels.size(); i > 1; --i)
        std::swap(labels[i - 1], labels[shuffle_rng.uniform_int(i)]);

    Rng rng(derive_seed(config.seed, kSampleStream));
    auto draw_tokens = [&](std::size_t concept_id, bool matches, std::size_t len_min,
                           std::size_t len_max) {
        auto len = static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::int64_t>(len_min), static_cast<std::int64_t>(len_max)));
        std::size_t source = concept_id;
        if (!matches) {
            // Uniformly random concept other than the true one.
            std::size_t other = rng.uniform_int(static_cast<std::uint64_t>(n_concepts - 1));
            source = other < concept_id ? other : other + 1;
        }
        SubVocab sv = concept_sub_vocab(config.vocab_size, n_concepts, source);
        std::vector<std::int64_t> ids(len);
        for (auto& id : ids)
            id = sv.begin + static_cast<std::int64_t>(
                                rng.uniform_int(static_cast<std::uint64_t>(sv.end - sv.begin)));
        return ids;
    };

    std::vector<TripletSample> samples;
    samples.reserve(config.n_samples);
    for (std::size_t i = 0; i < config.n_samples; ++i) {
        TripletSample s;
        s.category = labels[i];
        auto concept_id = static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::uint64_t>(n_concepts)));
        s.true_concept = static_cast<std::int64_t>(concept_id);
        s.image_features.resize(dim);
        for (std::size_t j = 0; j < dim; ++j)
            s.image_features[j] =
                latents[concept_id][j] + rng.normal(0.0, config.image_noise_sigma);
        bool text_good = s.category == NoiseCategory::BothGood ||
                         s.category == NoiseCategory::TextGoodCaptionBad;
        bool caption_good = s.category == NoiseCategory::BothGood ||
                            s.category == NoiseCategory::TextBadCaptionGood;
        s.text_tokens =
            draw_tokens(concept_id, text_good, config.text_len_min, config.text_len_max);
        s.caption_tokens =
            draw_tokens(concept_id, caption_good, config.caption_len_min, config.caption_len_max);
        samples.push_back(std::move(s));
    }
    return samples;
}

// --------------------------------------------------------------------------
// File format
// --------------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "ALIP-CORPUS";
constexpr const char* kVersion = "v1";

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw Error("failed to format floating-point value");
    return std::string(buf, ptr);
}

double parse_double(const std::string& field, std::size_t line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        throw ParseError("line " + std::to_string(line_no) + ": bad floating-point value '" +
                         field + "'");
    return v;
}

std::int64_t parse_int(const std::string& field, std::size_t line_no, const char* what) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " '" + field + "'");
    return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace

void write_corpus(const std::vector<TripletSample>& samples, std::size_t image_feature_dim,
                  std::size_t vocab_size, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << kMagic << ' ' << kVersion << ' ' << samples.size() << ' ' << image_feature_dim << ' '
        << vocab_size << '\n';
    for (const auto& s : samples) {
        if (s.image_features.size() != image_feature_dim)
            throw ShapeError("corpus write: sample has " +
                             std::to_string(s.image_features.size()) + " image features, header " +
                             "says " + std::to_string(image_feature_dim));
        out << s.true_concept << '\t' << to_string(s.category) << '\t';
        for (std::size_t j = 0; j < s.image_features.size(); ++j) {
            if (j) out << ',';
            out << format_double(s.image_features[j]);
        }
        out << '\t';
        for (std::size_t j = 0; j < s.text_tokens.size(); ++j) {
            if (j) out << ' ';
            out << s.text_tokens[j];
        }
        out << '\t';
        for (std::size_t j = 0; j < s.caption_tokens.size(); ++j) {
            if (j) out << ' ';
            out << s.caption_tokens[j];
        }
        out << '\n';
    }
    if (!out) throw IoError("failed while writing '" + path + "'");
}

CorpusFile read_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    std::string header;
    if (!std::getline(in, header)) throw ParseError("line 1: missing corpus header");
    std::istringstream hs(header);
    std::string magic, version;
    std::size_t n_samples = 0;
    CorpusFile file;
    if (!(hs >> magic >> version) || magic != kMagic)
        throw ParseError("line 1: not a corpus file (bad magic)");
    if (version != kVersion)
        throw ParseError("line 1: unsupported corpus version '" + version + "', expected '" +
                         kVersion + "'");
    if (!(hs >> n_samples >> file.image_feature_dim >> file.vocab_size))
        throw ParseError("line 1: malformed corpus header '" + header + "'");

    auto parse_ids = [&](const std::string& field, std::size_t line_no, const char* what) {
        std::vector<std::int64_t> ids;
        for (const auto& tok : split(field, ' ')) {
            if (tok.empty()) continue;
            std::int64_t id = parse_int(tok, line_no, what);
            if (id < 0 || static_cast<std::size_t>(id) >= file.vocab_size)
                throw ParseError("line " + std::to_string(line_no) + ": token id " +
                                 std::to_string(id) + " out of range [0, " +
                                 std::to_string(file.vocab_size) + ")");
            ids.push_back(id);
        }
        return ids;
    };

    std::string line;
    std::size_t line_no = 1;
    file.samples.reserve(n_samples);
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        auto fields = split(line, '\t');
        if (fields.size() != 5)
            throw ParseError("line " + std::to_string(line_no) + ": expected 5 tab-separated " +
                             "fields, found " + std::to_string(fields.size()));
        TripletSample s;
        s.true_concept = parse_int(fields[0], line_no, "concept id");
        try {
            s.category = noise_category_from_string(fields[1]);
        } catch (const DomainError& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        for (const auto& field : split(fields[2], ','))
            s.image_features.push_back(parse_double(field, line_no));
        if (s.image_features.size() != file.image_feature_dim)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(file.image_feature_dim) + " image features, found " +
                             std::to_string(s.image_features.size()));
        s.text_tokens = parse_ids(fields[3], line_no, "text token");
        s.caption_tokens = parse_ids(fields[4], line_no, "caption token");
        file.samples.push_back(std::move(s));
    }
    if (file.samples.size() < n_samples)
        throw ParseError("line " + std::to_string(file.samples.size() + 2) +
                         ": unexpected end of file, header promises " +
                         std::to_string(n_samples) + " samples but only " +
                         std::to_string(file.samples.size()) + " are present");
    if (file.samples.size() > n_samples)
        throw ParseError("line " + std::to_string(n_samples + 2) +
                         ": extra record beyond the " + std::to_string(n_samples) +
                         " promised by the header");
    return file;
}

// --------------------------------------------------------------------------
// Batching
// --------------------------------------------------------------------------

TripletBatch make_batch(const std::vector<TripletSample>& samples,
                        const std::vector<std::size_t>& indices, std::size_t max_text_len) {
    if (indices.empty()) throw DomainError("cannot build an empty batch");
    if (max_text_len == 0) throw DomainError("max token length must be positive");

    auto fit = [&](const std::vector<std::int64_t>& ids) {
        std::vector<std::int64_t> row(max_text_len, kPadId);
        std::size_t n = std::min(ids.size(), max_text_len);
        std::copy(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), row.begin());
        return row;
    };

    std::size_t dim = samples.at(indices.front()).image_features.size();
    TripletBatch batch;
    std::vector<double> features;
    features.reserve(indices.size() * dim);
    for (std::size_t idx : indices) {
        const TripletSample& s = samples.at(idx);
        if (s.image_features.size() != dim)
            throw ShapeError("batching: inconsistent image feature widths in corpus");
        features.insert(features.end(), s.image_features.begin(), s.image_features.end());
        batch.text_tokens.push_back(fit(s.text_tokens));
        batch.caption_tokens.push_back(fit(s.caption_tokens));
        batch.true_concepts.push_back(s.true_concept);
        batch.categories.push_back(s.category);
        batch.sample_indices.push_back(idx);
    }
    batch.image_features = Tensor::from_data({indices.size(), dim}, std::move(features));
    return batch;
}

std::vector<TripletBatch> batch_iterator(const std::vector<TripletSample>& samples,
                                         std::size_t batch_size, std::uint64_t shuffle_seed,
                                         std::size_t epoch, std::size_t max_text_len) {
    if (batch_size == 0) throw DomainError("batch size must be positive");
    if (batch_size > samples.size())
        throw DomainError("batch size " + std::to_string(batch_size) + " exceeds corpus size " +
                          std::to_string(samples.size()));
    if (max_text_len == 0) throw DomainError("max token length must be positive");

    std::vector<std::size_t> perm(samples.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(shuffle_seed, kBatchStream), epoch));
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[rng.uniform_int(i)]);

    std::size_t n_batches = samples.size() / batch_size;  // drop-last
    std::vector<TripletBatch> batches;
    batches.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::vector<std::size_t> indices(perm.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                                         perm.begin() +
                                             static_cast<std::ptrdiff_t>((b + 1) * batch_size));
        batches.push_back(make_batch(samples, indices, max_text_len));
    }
    return batches;
}

}  // namespace alip
