#include "shapecodec/encoder.hpp"

#include <stdexcept>
#include <string>

namespace shapecodec::encoder {

Encoder::Encoder(nn::ParamStore& ps, const EncoderConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    if (cfg.width % 2 != 0) throw std::invalid_argument("encoder width must be even");
    if (cfg.width % cfg.n_heads != 0)
        throw std::invalid_argument("encoder width must be divisible by n_heads");

    freqs_ = ps.create("enc.embed.freqs", cfg.width / 2, 3, cfg.posembed_sigma, rng);
    embed_out_ = nn::make_linear(ps, "enc.embed.out", cfg.width, cfg.width, rng);
    cls_ = ps.create("enc.cls", 1, cfg.width, 0.02, rng);
    if (cfg.position_mode == PositionMode::Learnable) {
        learned_patch_pos_ = ps.create("enc.patch_pos", cfg.n_patches, cfg.width, 0.02, rng);
        learned_latent_pos_ = ps.create("enc.latent_pos", cfg.n_latents, cfg.width, 0.02, rng);
    }

    blocks_.reserve(static_cast<size_t>(cfg.n_blocks));
    for (int b = 0; b < cfg.n_blocks; ++b) {
        std::string p = "enc.block" + std::to_string(b);
        Block blk;
        blk.cross_patch_from_points = nn::make_block(ps, p + ".cross_hg", cfg.width, cfg.n_heads, rng);
        for (int i = 0; i < 3; ++i)
            blk.self_patches.push_back(
                nn::make_block(ps, p + ".self_h" + std::to_string(i), cfg.width, cfg.n_heads, rng));
        blk.cross_compact_from_patches = nn::make_block(ps, p + ".cross_fh", cfg.width, cfg.n_heads, rng);
        blk.self_compact = nn::make_block(ps, p + ".self_f", cfg.width, cfg.n_heads, rng);
        blk.cross_points_from_compact = nn::make_block(ps, p + ".cross_gf", cfg.width, cfg.n_heads, rng);
        blocks_.push_back(std::move(blk));
    }
    final_compact_from_points_ = nn::make_block(ps, "enc.final_fg", cfg.width, cfg.n_heads, rng);

    kl_mu_ = nn::make_linear(ps, "kl.mu", cfg.width, cfg.latent_dim, rng);
    kl_logvar_ = nn::make_linear(ps, "kl.logvar", cfg.width, cfg.latent_dim, rng);
}

Tensor Encoder::positional_embed(const Tensor& positions) const {
    if (positions.cols() != 3) throw std::invalid_argument("positional_embed: expected P x 3");
    Tensor phases = ad::matmul(positions, ad::transpose(freqs_));
    Tensor features = ad::concat_cols({ad::sinm(phases), ad::cosm(phases)});
    return embed_out_(features);
}

Encoder::Features Encoder::encoder_block(int block, const Features& in) const {
    if (in.highres.cols() != cfg_.width || in.patches.cols() != cfg_.width ||
        in.compact.cols() != cfg_.width)
        throw std::invalid_argument("encoder_block: feature width mismatch");
    const Block& blk = blocks_.at(static_cast<size_t>(block));
    const Eigen::Index n_patches = in.patches.rows();

    Tensor h = blk.cross_patch_from_points.cross_forward(in.patches, in.highres);
    h = ad::concat_rows({h, cls_});
    for (const auto& self_block : blk.self_patches) h = self_block.self_forward(h);
    h = ad::slice_rows(h, 0, n_patches);

    Tensor f = blk.cross_compact_from_patches.cross_forward(in.compact, h);
    f = blk.self_compact.self_forward(f);

    Tensor g = blk.cross_points_from_compact.cross_forward(in.highres, f);
    return {g, h, f};
}

std::vector<int> Encoder::select_anchors(const Points& cloud, std::uint64_t seed) const {
    return geometry::farthest_point_sample(cloud, cfg_.n_patches, seed);
}

Tensor Encoder::encode(const Tensor& cloud, const std::vector<int>& anchors) const {
    if (cloud.rows() < cfg_.n_patches)
        throw std::invalid_argument("encode: cloud has " + std::to_string(cloud.rows()) +
                                    " points but n_patches=" + std::to_string(cfg_.n_patches));
    Features feats;
    feats.highres = positional_embed(cloud);
    if (cfg_.position_mode == PositionMode::Learnable) {
        feats.patches = learned_patch_pos_;
        feats.compact = learned_latent_pos_;
    } else {
        if (static_cast<int>(anchors.size()) != cfg_.n_patches)
            throw std::invalid_argument("encode: anchor count must equal n_patches");
        std::vector<int> latent_anchors(anchors.begin(), anchors.begin() + cfg_.n_latents);
        feats.patches = positional_embed(ad::gather_rows(cloud, anchors));
        feats.compact = positional_embed(ad::gather_rows(cloud, latent_anchors));
    }
    for (int b = 0; b < cfg_.n_blocks; ++b) feats = encoder_block(b, feats);
    return final_compact_from_points_.cross_forward(feats.compact, feats.highres);
}

Tensor Encoder::encode(const Points& cloud, std::uint64_t seed) const {
    std::vector<int> anchors;
    if (cfg_.position_mode == PositionMode::InputDependent) anchors = select_anchors(cloud, seed);
    return encode(Tensor::constant(cloud), anchors);
}

std::pair<Tensor, Tensor> Encoder::kl_compress(const Tensor& compact) const {
    return {kl_mu_(compact), kl_logvar_(compact)};
}

Tensor Encoder::reparameterize(const Tensor& mu, const Tensor& logvar, const Mat& noise) {
    if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols() || mu.rows() != noise.rows() ||
        mu.cols() != noise.cols())
        throw std::invalid_argument("reparameterize: shape mismatch");
    Tensor sigma = ad::expm(ad::scale(logvar, 0.5));
    return ad::add(mu, ad::mul(sigma, Tensor::constant(noise)));
}

}  // namespace shapecodec::encoder
