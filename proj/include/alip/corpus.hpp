#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "alip/error.hpp"
#include "alip/tensor.hpp"

namespace alip {

// ---------------------------------------------------------------------------
// Synthetic triplet corpus: deterministic generator, file format, batching.
// ---------------------------------------------------------------------------

// Ground-truth quality label of a sample's text and caption relative to the
// concept its image was drawn from. Held out of training; evaluation uses it
// to split weight statistics.
enum class NoiseCategory : int {
    BothGood = 0,
    TextBadCaptionGood = 1,
    TextGoodCaptionBad = 2,
    BothBad = 3,
};
inline constexpr std::size_t kNumNoiseCategories = 4;

const char* to_string(NoiseCategory category);
NoiseCategory noise_category_from_string(const std::string& name);

struct CorpusConfig {
    std::size_t n_samples = 0;
    std::size_t n_concepts = 64;
    std::size_t image_feature_dim = 64;
    std::size_t vocab_size = 1024;
    std::size_t text_len_min = 8;
    std::size_t text_len_max = 24;
    std::size_t caption_len_min = 6;
    std::size_t caption_len_max = 12;
    // Probability of each NoiseCategory, in enum order. Counts are apportioned
    // exactly (largest remainder), not sampled.
    std::array<double, kNumNoiseCategories> category_probs = {0.60, 0.25, 0.10, 0.05};
    double image_noise_sigma = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TripletSample {
    std::vector<double> image_features;
    std::vector<std::int64_t> text_tokens;
    std::vector<std::int64_t> caption_tokens;
    std::int64_t true_concept = 0;
    NoiseCategory category = NoiseCategory::BothGood;

    bool operator==(const TripletSample&) const = default;
};

// Half-open token-id interval [begin, end) owned by one concept. Id 0 is the
// padding id and belongs to no concept; concepts partition [1, vocab_size) into
// equal disjoint runs (any remainder stays unassigned).
struct SubVocab {
    std::int64_t begin = 0;
    std::int64_t end = 0;

    bool contains(std::int64_t id) const { return id >= begin && id < end; }
};
SubVocab concept_sub_vocab(std::size_t vocab_size, std::size_t n_concepts, std::size_t concept_id);

// Splits `n` into per-category counts proportional to `probs` using the
// largest-remainder method: floor every quota n*p_i, then hand the leftover
// units to the largest fractional parts (ties favor the lower index). The
// result always sums to n exactly.
std::array<std::size_t, kNumNoiseCategories> apportion_counts(
    std::size_t n, const std::array<double, kNumNoiseCategories>& probs);

// Deterministic generation: same config (seed included) always produces the
// same sample list, bit for bit.
std::vector<TripletSample> generate_corpus(const CorpusConfig& config);

// Line-oriented TSV container. Header `ALIP-CORPUS v1 <n_samples>
// <image_feature_dim> <vocab_size>`, then one sample per line:
// concept, category name, comma-separated image floats (shortest round-trip
// decimals), space-separated text ids, space-separated caption ids.
struct CorpusFile {
    std::size_t image_feature_dim = 0;
    std::size_t vocab_size = 0;
    std::vector<TripletSample> samples;
};

void write_corpus(const std::vector<TripletSample>& samples, std::size_t image_feature_dim,
                  std::size_t vocab_size, const std::string& path);
CorpusFile read_corpus(const std::string& path);

// One training batch. Token rows are padded/truncated to a fixed length so
// every sample in the batch has identical token-sequence width;
// `sample_indices` maps batch rows back to positions in the source list.
struct TripletBatch {
    Tensor image_features;
    std::vector<std::vector<std::int64_t>> text_tokens;
    std::vector<std::vector<std::int64_t>> caption_tokens;
    std::vector<std::int64_t> true_concepts;
    std::vector<NoiseCategory> categories;
    std::vector<std::size_t> sample_indices;

    std::size_t size() const { return sample_indices.size(); }
};

// Assembles the samples at `indices` (in that order) into one batch.
TripletBatch make_batch(const std::vector<TripletSample>& samples,
                        const std::vector<std::size_t>& indices, std::size_t max_text_len);

// Shuffles deterministically by (shuffle_seed, epoch) and drops the final
// partial batch so every batch has exactly batch_size samples.
std::vector<TripletBatch> batch_iterator(const std::vector<TripletSample>& samples,
                                         std::size_t batch_size, std::uint64_t shuffle_seed,
                                         std::size_t epoch, std::size_t max_text_len);

}  // namespace alip
