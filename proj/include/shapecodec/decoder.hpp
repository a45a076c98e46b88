#pragma once

#include <array>
#include <utility>
#include <vector>

#include "shapecodec/ad.hpp"
#include "shapecodec/nn.hpp"

namespace shapecodec::decoder {

using ad::Mat;
using ad::Tensor;

struct DecoderConfig {
    int resolution = 128;       // R
    int patch_size = 8;         // f
    int width = 256;            // C, matches the encoder width
    int triplane_channels = 32; // C_t
    int n_layers = 4;           // transformer depth after pruning
    int n_latent_layers = 2;    // self-attention depth of the latent decoder
    int latent_dim = 32;        // D
    int n_merged = 8;
    int n_heads = 8;
    double keep_ratio = 0.25;

    int tokens_per_side() const { return resolution / patch_size; }
    int token_count() const { return 3 * tokens_per_side() * tokens_per_side(); }
};

// Token index t maps to (plane, row, col) with plane-major, row-major order;
// planes are (xy, yz, xz).
inline int plane_of(const DecoderConfig& cfg, int token) {
    return token / (cfg.tokens_per_side() * cfg.tokens_per_side());
}
inline std::pair<int, int> cell_of(const DecoderConfig& cfg, int token) {
    int g = cfg.tokens_per_side();
    int local = token % (g * g);
    return {local / g, local % g};
}

// Top-|round(keep_ratio*T)| token indices by logit (ties to the lowest
// index); both lists come back ascending and partition 0..T-1.
std::pair<std::vector<int>, std::vector<int>> prune_tokens(const Eigen::VectorXd& logits,
                                                           double keep_ratio);

// Latent decompression, triplane-token initialization, uncertainty-ranked
// pruning, masked transformer processing, and sigmoid-weighted assembly of
// dense triplanes.
class Decoder {
public:
    Decoder(nn::ParamStore& ps, const DecoderConfig& cfg, RandomStream& rng);

    // z: M x D -> M x C (linear + self-attention layers)
    Tensor latent_decode(const Tensor& z) const;

    // cross-attention with the learnable token sequence as queries
    Tensor init_tokens(const Tensor& compact) const;

    Tensor predict_uncertainty(const Tensor& tokens) const;  // T x 1

    // Cross-attention of n_merged learned queries over the pruned set; with
    // nothing pruned the learned queries pass through unchanged.
    Tensor merge_pruned(const Tensor& pruned_tokens) const;

    // sequence = (kept + mask token) | compact | merged -> n_layers blocks,
    // returns the kept positions
    Tensor transform(const Tensor& kept_tokens, const Tensor& compact, const Tensor& merged) const;

    struct TriplanePair {
        std::array<Tensor, 3> base;  // dense projection of the initial tokens
        std::array<Tensor, 3> full;  // base + sigmoid(logits) .* scattered delta
    };

    TriplanePair assemble(const Tensor& initial_tokens, const Tensor& processed,
                          const std::vector<int>& kept, const Tensor& unc_logits) const;

    struct Forward {
        Tensor tokens;      // T x C, post-init
        Tensor unc_logits;  // T x 1
        std::vector<int> kept, pruned;
        Tensor processed;   // |kept| x C
        TriplanePair triplanes;
    };

    // Full decode from (decompressed) compact vectors. keep_ratio < 0 uses
    // the configured ratio.
    Forward decode(const Tensor& compact, double keep_ratio = -1.0) const;

    const DecoderConfig& config() const { return cfg_; }
    const Tensor& token_embedding() const { return token_embed_; }
    const Tensor& mask_token() const { return mask_token_; }

private:
    DecoderConfig cfg_;
    nn::Linear latent_in_;
    std::vector<nn::AttentionBlock> latent_blocks_;
    Tensor token_embed_;  // T x C
    nn::AttentionBlock init_cross_;
    nn::Linear unc_fc1_, unc_fc2_;
    Tensor merge_queries_;  // n_merged x C
    nn::AttentionBlock merge_cross_;
    Tensor mask_token_;  // 1 x C
    std::vector<nn::AttentionBlock> blocks_;
    nn::Linear project_base_, project_delta_;  // C -> f*f*C_t, separate maps
};

}  // namespace shapecodec::decoder
