#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "alip/tensor.hpp"

namespace alip {

// Token id reserved for padding. Pad positions never contribute to pooling
// and real vocabularies start at id 1.
inline constexpr std::int64_t kPadId = 0;

enum class EncoderMode { Mlp, TinyTransformer };

EncoderMode encoder_mode_from_string(const std::string& s);
std::string to_string(EncoderMode mode);

struct EncoderConfig {
    std::size_t embed_dim = 64;
    std::size_t vocab_size = 1024;
    std::size_t max_text_len = 32;
    std::size_t image_feature_dim = 64;
    std::size_t hidden_dim = 128;
    std::size_t depth = 2;
    EncoderMode mode = EncoderMode::Mlp;
    std::size_t heads = 4;  // TinyTransformer only

    void validate() const;
};

struct NamedParam {
    std::string name;
    Tensor value;
};

// Two-tower encoder pair producing unit-norm embeddings in a shared space.
//
// The image tower is an MLP over precomputed feature vectors. The token tower
// is either an MLP over mean-pooled token embeddings (fast; the default) or a
// small stack of pre-norm attention blocks. Raw texts and generated captions
// are encoded by the *same* token tower: there is exactly one set of token
// parameters, so sharing survives any number of optimizer steps by
// construction.
class DualEncoder {
public:
    DualEncoder(const EncoderConfig& config, std::uint64_t seed);

    // Re-rolls every parameter from the seed. Deterministic: same seed and
    // config give bit-identical parameters.
    void init_parameters(std::uint64_t seed);

    // [N, image_feature_dim] features -> [N, embed_dim] unit-norm embeddings.
    Tensor encode_image(const Tensor& features) const;

    // Batch of token id sequences -> [N, embed_dim] unit-norm embeddings.
    // Sequences are truncated to max_text_len and padded with kPadId; pad
    // positions are excluded from pooling. Serves both the text and the
    // caption path.
    Tensor encode_text(const std::vector<std::vector<std::int64_t>>& token_batch) const;

    std::vector<NamedParam>& parameters() { return params_; }
    const std::vector<NamedParam>& parameters() const { return params_; }
    const Tensor& param(const std::string& name) const;
    std::size_t parameter_count() const;

    const EncoderConfig& config() const { return config_; }

private:
    Tensor add_param(const std::string& name, Tensor value);
    Tensor encode_tokens_mlp(const Tensor& embedded, const std::vector<double>& pool_weights,
                             std::size_t n) const;
    Tensor encode_tokens_transformer(const Tensor& embedded,
                                     const std::vector<double>& pool_weights, std::size_t n) const;

    EncoderConfig config_;
    std::vector<NamedParam> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace alip
