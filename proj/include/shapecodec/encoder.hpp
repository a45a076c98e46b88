#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "shapecodec/ad.hpp"
#include "shapecodec/geometry.hpp"
#include "shapecodec/nn.hpp"

namespace shapecodec::encoder {

using ad::Mat;
using ad::Tensor;
using geometry::Points;

enum class PositionMode { InputDependent, Learnable };

struct EncoderConfig {
    int n_points = 2048;   // N
    int n_patches = 256;   // L
    int n_latents = 32;    // M
    int width = 256;       // C
    int latent_dim = 32;   // D
    int n_blocks = 4;
    int n_heads = 8;
    PositionMode position_mode = PositionMode::InputDependent;
    double posembed_sigma = 5.0;  // stddev of the learnable embedding frequencies
};

// Progressive point-to-latent compression. Per block: patch features
// aggregate the high-resolution set through cross-attention and three
// self-attention layers (with a CLS slot appended and dropped), compact
// vectors aggregate the patches, and high-resolution features are refreshed
// from the compact set. A final cross-attention reads the high-resolution
// features into the compact vectors, and the KL block projects them to
// Gaussian latent parameters.
class Encoder {
public:
    Encoder(nn::ParamStore& ps, const EncoderConfig& cfg, RandomStream& rng);

    // positions: P x 3 in [-1,1]; returns P x C. Shared across G/H/F anchors.
    Tensor positional_embed(const Tensor& positions) const;

    struct Features {
        Tensor highres;  // N x C
        Tensor patches;  // L x C
        Tensor compact;  // M x C
    };

    Features encoder_block(int block, const Features& in) const;

    // FPS anchors; the first n_latents entries double as the compact anchors.
    std::vector<int> select_anchors(const Points& cloud, std::uint64_t seed) const;

    // Graph-building encode; `cloud` may carry gradient (used by the
    // input-coordinate gradient checks).
    Tensor encode(const Tensor& cloud, const std::vector<int>& anchors) const;

    // Convenience: constant input, anchors chosen by seed.
    Tensor encode(const Points& cloud, std::uint64_t seed) const;

    std::pair<Tensor, Tensor> kl_compress(const Tensor& compact) const;

    // z = mu + exp(0.5*logvar) .* noise
    static Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Mat& noise);

    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    Tensor freqs_;         // (width/2) x 3 embedding frequencies
    nn::Linear embed_out_;
    Tensor cls_;           // 1 x C slot appended during patch self-attention
    Tensor learned_patch_pos_, learned_latent_pos_;  // learnable position mode

    struct Block {
        nn::AttentionBlock cross_patch_from_points;
        std::vector<nn::AttentionBlock> self_patches;  // 3
        nn::AttentionBlock cross_compact_from_patches;
        nn::AttentionBlock self_compact;
        nn::AttentionBlock cross_points_from_compact;
    };
    std::vector<Block> blocks_;
    nn::AttentionBlock final_compact_from_points_;
    nn::Linear kl_mu_, kl_logvar_;
};

}  // namespace shapecodec::encoder
