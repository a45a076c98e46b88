#include "shapecodec/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

namespace shapecodec::decoder {

std::pair<std::vector<int>, std::vector<int>> prune_tokens(const Eigen::VectorXd& logits,
                                                           double keep_ratio) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
        throw std::invalid_argument("prune_tokens: keep_ratio must be in (0,1]");
    const int t = static_cast<int>(logits.size());
    int k = static_cast<int>(std::lround(keep_ratio * t));
    k = std::clamp(k, 0, t);

    std::vector<int> order(static_cast<size_t>(t));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (logits(a) != logits(b)) return logits(a) > logits(b);
        return a < b;
    });
    std::vector<int> kept(order.begin(), order.begin() + k);
    std::vector<int> pruned(order.begin() + k, order.end());
    std::sort(kept.begin(), kept.end());
    std::sort(pruned.begin(), pruned.end());
    return {kept, pruned};
}

Decoder::Decoder(nn::ParamStore& ps, const DecoderConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    if (cfg.resolution % cfg.patch_size != 0)
        throw std::invalid_argument("decoder resolution must be divisible by patch_size");
    if (cfg.width % cfg.n_heads != 0)
        throw std::invalid_argument("decoder width must be divisible by n_heads");

    latent_in_ = nn::make_linear(ps, "latdec.in", cfg.latent_dim, cfg.width, rng);
    for (int i = 0; i < cfg.n_latent_layers; ++i)
        latent_blocks_.push_back(
            nn::make_block(ps, "latdec.self" + std::to_string(i), cfg.width, cfg.n_heads, rng));

    token_embed_ = ps.create("dec.token_embed", cfg.token_count(), cfg.width, 0.02, rng);
    init_cross_ = nn::make_block(ps, "dec.init_cross", cfg.width, cfg.n_heads, rng);

    unc_fc1_ = nn::make_linear(ps, "dec.unc.fc1", cfg.width, 64, rng);
    unc_fc2_ = nn::make_linear(ps, "dec.unc.fc2", 64, 1, rng);

    merge_queries_ = ps.create("dec.merge_queries", cfg.n_merged, cfg.width, 0.02, rng);
    merge_cross_ = nn::make_block(ps, "dec.merge_cross", cfg.width, cfg.n_heads, rng);

    mask_token_ = ps.create("dec.mask_token", 1, cfg.width, 0.02, rng);
    for (int i = 0; i < cfg.n_layers; ++i)
        blocks_.push_back(nn::make_block(ps, "dec.block" + std::to_string(i), cfg.width, cfg.n_heads, rng));

    const int patch_dim = cfg.patch_size * cfg.patch_size * cfg.triplane_channels;
    project_base_ = nn::make_linear(ps, "dec.project_base", cfg.width, patch_dim, rng);
    project_delta_ = nn::make_linear(ps, "dec.project_delta", cfg.width, patch_dim, rng);
}

Tensor Decoder::latent_decode(const Tensor& z) const {
    Tensor f = latent_in_(z);
    for (const auto& blk : latent_blocks_) f = blk.self_forward(f);
    return f;
}

Tensor Decoder::init_tokens(const Tensor& compact) const {
    if (compact.cols() != cfg_.width)
        throw std::invalid_argument("init_tokens: width mismatch");
    return init_cross_.cross_forward(token_embed_, compact);
}

Tensor Decoder::predict_uncertainty(const Tensor& tokens) const {
    return unc_fc2_(ad::gelu(unc_fc1_(tokens)));
}

Tensor Decoder::merge_pruned(const Tensor& pruned_tokens) const {
    if (pruned_tokens.rows() == 0) return merge_queries_;
    return merge_cross_.cross_forward(merge_queries_, pruned_tokens);
}

Tensor Decoder::transform(const Tensor& kept_tokens, const Tensor& compact, const Tensor& merged) const {
    if (kept_tokens.cols() != cfg_.width || compact.cols() != cfg_.width || merged.cols() != cfg_.width)
        throw std::invalid_argument("transform: width mismatch");
    const Eigen::Index n_kept = kept_tokens.rows();
    Tensor seq = ad::concat_rows({ad::add_rowvec(kept_tokens, mask_token_), compact, merged});
    for (const auto& blk : blocks_) seq = blk.self_forward(seq);
    return ad::slice_rows(seq, 0, n_kept);
}

Decoder::TriplanePair Decoder::assemble(const Tensor& initial_tokens, const Tensor& processed,
                                        const std::vector<int>& kept, const Tensor& unc_logits) const {
    const int g = cfg_.tokens_per_side();
    const int per_plane = g * g;
    const int t = cfg_.token_count();
    if (initial_tokens.rows() != t) throw std::invalid_argument("assemble: bad token count");
    if (static_cast<Eigen::Index>(kept.size()) != processed.rows())
        throw std::invalid_argument("assemble: kept/processed size mismatch");
    {
        std::set<int> uniq(kept.begin(), kept.end());
        if (uniq.size() != kept.size())
            throw std::invalid_argument("assemble: duplicate indices in kept list");
        if (!uniq.empty() && (*uniq.begin() < 0 || *uniq.rbegin() >= t))
            throw std::invalid_argument("assemble: kept index out of range");
    }

    Tensor base_patches = project_base_(initial_tokens);
    Tensor delta_patches = ad::scatter_rows(project_delta_(processed), kept, t);
    Tensor weights = ad::sigmoid(unc_logits);  // T x 1

    // per-pixel weight rows: nearest upsampling from the token grid
    const int R = cfg_.resolution, f = cfg_.patch_size;
    std::vector<int> pixel_to_token(static_cast<size_t>(R) * R);
    for (int u = 0; u < R; ++u)
        for (int v = 0; v < R; ++v)
            pixel_to_token[static_cast<size_t>(u) * R + v] = (u / f) * g + (v / f);

    TriplanePair out;
    for (int plane = 0; plane < 3; ++plane) {
        Tensor base_p = ad::patch_to_pixels(ad::slice_rows(base_patches, plane * per_plane, per_plane),
                                            g, f, cfg_.triplane_channels);
        Tensor delta_p = ad::patch_to_pixels(ad::slice_rows(delta_patches, plane * per_plane, per_plane),
                                             g, f, cfg_.triplane_channels);
        std::vector<int> map = pixel_to_token;
        for (auto& m : map) m += plane * per_plane;
        Tensor w_pixels = ad::gather_rows(weights, map);  // (R*R) x 1
        out.base[plane] = base_p;
        out.full[plane] = ad::add(base_p, ad::scale_rows(delta_p, w_pixels));
    }
    return out;
}

Decoder::Forward Decoder::decode(const Tensor& compact, double keep_ratio) const {
    if (keep_ratio < 0.0) keep_ratio = cfg_.keep_ratio;
    Forward fw;
    fw.tokens = init_tokens(compact);
    fw.unc_logits = predict_uncertainty(fw.tokens);
    std::tie(fw.kept, fw.pruned) = prune_tokens(fw.unc_logits.value().col(0), keep_ratio);
    Tensor kept_tokens = ad::gather_rows(fw.tokens, fw.kept);
    Tensor pruned_tokens = fw.pruned.empty()
                               ? Tensor::constant(Mat::Zero(0, cfg_.width))
                               : ad::gather_rows(fw.tokens, fw.pruned);
    Tensor merged = merge_pruned(pruned_tokens);
    fw.processed = transform(kept_tokens, compact, merged);
    fw.triplanes = assemble(fw.tokens, fw.processed, fw.kept, fw.unc_logits);
    return fw;
}

}  // namespace shapecodec::decoder
