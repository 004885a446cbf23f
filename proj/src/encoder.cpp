#include "alip/encoder.hpp"

#include <cmath>

#include "alip/error.hpp"
#include "alip/rng.hpp"

namespace alip {

namespace {

constexpr double kAttnMask = -1e30;

Tensor xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> data(fan_in * fan_out);
    for (auto& v : data) v = rng.uniform(-limit, limit);
    return Tensor::from_data({fan_in, fan_out}, std::move(data), true);
}

Tensor small_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 0.02) {
    std::vector<double> data(rows * cols);
    for (auto& v : data) v = rng.normal(0.0, stddev);
    return Tensor::from_data({rows, cols}, std::move(data), true);
}

Tensor zero_bias(std::size_t n) { return Tensor::zeros({1, n}, true); }

// Final output normalization. Applied twice: the epsilon inside the norm
// leaves rows short of unit length by eps/(2 n^2), which is visible when a
// projection output row is small; renormalizing the near-unit result pins the
// deviation at ~5e-13 regardless of the input scale.
Tensor unit_rows(const Tensor& x) { return l2_normalize_rows(l2_normalize_rows(x)); }

}  // namespace

EncoderMode encoder_mode_from_string(const std::string& s) {
    if (s == "mlp") return EncoderMode::Mlp;
    if (s == "tiny_transformer") return EncoderMode::TinyTransformer;
    throw DomainError("encoder mode must be 'mlp' or 'tiny_transformer', got '" + s + "'");
}

std::string to_string(EncoderMode mode) {
    return mode == EncoderMode::Mlp ? "mlp" : "tiny_transformer";
}

void EncoderConfig::validate() const {
    if (embed_dim == 0 || vocab_size < 2 || max_text_len == 0 || image_feature_dim == 0 ||
        hidden_dim == 0) {
        throw DomainError("encoder config: dimensions must be positive and vocab_size >= 2");
    }
    if (mode == EncoderMode::TinyTransformer) {
        if (heads == 0 || embed_dim % heads != 0) {
            throw DomainError("encoder config: embed_dim " + std::to_string(embed_dim) +
                              " must be divisible by heads " + std::to_string(heads));
        }
    }
}

DualEncoder::DualEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    init_parameters(seed);
}

Tensor DualEncoder::add_param(const std::string& name, Tensor value) {
    index_[name] = params_.size();
    params_.push_back({name, value});
    return value;
}

const Tensor& DualEncoder::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("encoder: unknown parameter '" + name + "'");
    return params_[it->second].value;
}

void DualEncoder::init_parameters(std::uint64_t seed) {
    params_.clear();
    index_.clear();
    Rng rng(derive_seed(seed, /*stream=*/0xE11C0DE));

    const std::size_t e = config_.embed_dim;
    const std::size_t h = config_.hidden_dim;
    const std::size_t f = config_.image_feature_dim;
    const std::size_t v = config_.vocab_size;
    const std::size_t l = config_.max_text_len;
    const std::size_t d = config_.depth;

    // Image tower: MLP over feature vectors in both modes.
    if (d == 0) {
        add_param("img.proj", xavier_uniform(rng, f, e));
    } else {
        add_param("img.block0.w", xavier_uniform(rng, f, h));
        add_param("img.block0.b", zero_bias(h));
        for (std::size_t b = 1; b < d; ++b) {
            add_param("img.block" + std::to_string(b) + ".w", xavier_uniform(rng, h, h));
            add_param("img.block" + std::to_string(b) + ".b", zero_bias(h));
        }
        add_param("img.proj", xavier_uniform(rng, h, e));
    }

    // Token tower, shared by the text and caption paths. Token embeddings are
    // hidden_dim wide in mlp mode and embed_dim wide in transformer mode.
    const std::size_t w = config_.mode == EncoderMode::Mlp ? h : e;
    add_param("txt.tok_emb", small_normal(rng, v, w));
    add_param("txt.pos_emb", small_normal(rng, l, w));
    if (config_.mode == EncoderMode::Mlp) {
        for (std::size_t b = 0; b < d; ++b) {
            add_param("txt.block" + std::to_string(b) + ".w", xavier_uniform(rng, h, h));
            add_param("txt.block" + std::to_string(b) + ".b", zero_bias(h));
        }
        add_param("txt.proj", xavier_uniform(rng, h, e));
    } else {
        const std::size_t dh = e / config_.heads;
        for (std::size_t b = 0; b < d; ++b) {
            std::string pre = "txt.block" + std::to_string(b) + ".";
            for (std::size_t hd = 0; hd < config_.heads; ++hd) {
                add_param(pre + "attn.q" + std::to_string(hd), xavier_uniform(rng, e, dh));
                add_param(pre + "attn.k" + std::to_string(hd), xavier_uniform(rng, e, dh));
                add_param(pre + "attn.v" + std::to_string(hd), xavier_uniform(rng, e, dh));
            }
            add_param(pre + "attn.out", xavier_uniform(rng, e, e));
            add_param(pre + "ffn.w1", xavier_uniform(rng, e, h));
            add_param(pre + "ffn.b1", zero_bias(h));
            add_param(pre + "ffn.w2", xavier_uniform(rng, h, e));
            add_param(pre + "ffn.b2", zero_bias(e));
        }
        add_param("txt.proj", xavier_uniform(rng, e, e));
    }
}

std::size_t DualEncoder::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

Tensor DualEncoder::encode_image(const Tensor& features) const {
    if (features.rank() != 2 || features.cols() != config_.image_feature_dim) {
        throw ShapeError("encode_image: expected [N," +
                         std::to_string(config_.image_feature_dim) + "] features, got " +
                         shape_str(features.shape()));
    }
    Tensor x = features;
    if (config_.depth == 0) {
        return unit_rows(matmul(x, param("img.proj")));
    }
    for (std::size_t b = 0; b < config_.depth; ++b) {
        std::string pre = "img.block" + std::to_string(b) + ".";
        x = relu(add_rowvec(matmul(x, param(pre + "w")), param(pre + "b")));
    }
    return unit_rows(matmul(x, param("img.proj")));
}

Tensor DualEncoder::encode_text(const std::vector<std::vector<std::int64_t>>& token_batch) const {
    if (token_batch.empty()) throw ShapeError("encode_text: empty batch");
    const std::size_t n = token_batch.size();
    const std::size_t l = config_.max_text_len;

    // Truncate/pad to a fixed [n, l] id grid and build the mean-pool weights.
    std::vector<std::int64_t> flat(n * l, kPadId);
    std::vector<double> pool_weights(n * l, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& seq = token_batch[i];
        std::size_t len = std::min(seq.size(), l);
        std::size_t valid = 0;
        for (std::size_t j = 0; j < len; ++j) {
            std::int64_t id = seq[j];
            if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
                throw DomainError("encode_text: token id " + std::to_string(id) +
                                  " out of range [0, " + std::to_string(config_.vocab_size) +
                                  ") at batch index " + std::to_string(i));
            }
            flat[i * l + j] = id;
            if (id != kPadId) ++valid;
        }
        if (valid == 0) {
            throw DomainError("encode_text: sequence at batch index " + std::to_string(i) +
                              " has no non-pad tokens to pool");
        }
        for (std::size_t j = 0; j < len; ++j) {
            if (flat[i * l + j] != kPadId) pool_weights[i * l + j] = 1.0 / valid;
        }
    }

    Tensor looked_up = embedding_lookup(param("txt.tok_emb"), flat);
    Tensor pos_tiled = concat_rows(std::vector<Tensor>(n, param("txt.pos_emb")));
    Tensor embedded = add(looked_up, pos_tiled);

    Tensor out = config_.mode == EncoderMode::Mlp
                     ? encode_tokens_mlp(embedded, pool_weights, n)
                     : encode_tokens_transformer(embedded, pool_weights, n);
    return unit_rows(out);
}

Tensor DualEncoder::encode_tokens_mlp(const Tensor& embedded,
                                      const std::vector<double>& pool_weights,
                                      std::size_t n) const {
    const std::size_t l = config_.max_text_len;
    // Masked mean pooling as one constant [n, n*l] matrix multiply.
    std::vector<double> pool(n * n * l, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < l; ++j) pool[i * (n * l) + i * l + j] = pool_weights[i * l + j];
    Tensor pooled = matmul(Tensor::from_data({n, n * l}, std::move(pool)), embedded);

    Tensor x = pooled;
    for (std::size_t b = 0; b < config_.depth; ++b) {
        std::string pre = "txt.block" + std::to_string(b) + ".";
        x = relu(add_rowvec(matmul(x, param(pre + "w")), param(pre + "b")));
    }
    return matmul(x, param("txt.proj"));
}

Tensor DualEncoder::encode_tokens_transformer(const Tensor& embedded,
                                              const std::vector<double>& pool_weights,
                                              std::size_t n) const {
    const std::size_t l = config_.max_text_len;
    const std::size_t e = config_.embed_dim;
    const std::size_t dh = e / config_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double rms_scale = std::sqrt(static_cast<double>(e));

    std::vector<Tensor> pooled_rows;
    pooled_rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor x = slice_rows(embedded, i * l, l);

        // Additive key mask: pad columns get a large negative logit.
        std::vector<double> mask(l * l, 0.0);
        for (std::size_t q = 0; q < l; ++q)
            for (std::size_t k = 0; k < l; ++k)
                if (pool_weights[i * l + k] == 0.0) mask[q * l + k] = kAttnMask;
        Tensor mask_t = Tensor::from_data({l, l}, std::move(mask));

        for (std::size_t b = 0; b < config_.depth; ++b) {
            std::string pre = "txt.block" + std::to_string(b) + ".";
            // Pre-norm: RMS-style normalization built from row L2 norm.
            Tensor xn = mul_scalar(l2_normalize_rows(x), rms_scale);
            std::vector<Tensor> heads;
            heads.reserve(config_.heads);
            for (std::size_t hd = 0; hd < config_.heads; ++hd) {
                std::string hs = std::to_string(hd);
                Tensor q = matmul(xn, param(pre + "attn.q" + hs));
                Tensor k = matmul(xn, param(pre + "attn.k" + hs));
                Tensor v = matmul(xn, param(pre + "attn.v" + hs));
                Tensor scores = add(mul_scalar(matmul(q, transpose(k)), scale), mask_t);
                heads.push_back(matmul(softmax_rows(scores), v));
            }
            x = add(x, matmul(concat_cols(heads), param(pre + "attn.out")));

            Tensor x2 = mul_scalar(l2_normalize_rows(x), rms_scale);
            Tensor f = relu(add_rowvec(matmul(x2, param(pre + "ffn.w1")), param(pre + "ffn.b1")));
            Tensor f2 = add_rowvec(matmul(f, param(pre + "ffn.w2")), param(pre + "ffn.b2"));
            x = add(x, f2);
        }

        std::vector<double> poolrow(pool_weights.begin() + static_cast<std::ptrdiff_t>(i * l),
                                    pool_weights.begin() + static_cast<std::ptrdiff_t>((i + 1) * l));
        pooled_rows.push_back(matmul(Tensor::from_data({1, l}, std::move(poolrow)), x));
    }
    return matmul(concat_rows(pooled_rows), param("txt.proj"));
}

}  // namespace alip
