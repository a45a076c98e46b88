#include "shapecodec/model.hpp"

#include "shapecodec/errors.hpp"

namespace shapecodec::model {

void validate(const ModelConfig& cfg) {
    const auto& e = cfg.encoder;
    const auto& d = cfg.decoder;
    if (e.n_latents > e.n_patches)
        throw ConfigError("encoder.n_latents (" + std::to_string(e.n_latents) +
                          ") must be <= encoder.n_patches (" + std::to_string(e.n_patches) + ")");
    if (e.n_patches > e.n_points)
        throw ConfigError("encoder.n_patches (" + std::to_string(e.n_patches) +
                          ") must be <= encoder.n_points (" + std::to_string(e.n_points) + ")");
    if (e.latent_dim >= e.width)
        throw ConfigError("encoder.latent_dim (" + std::to_string(e.latent_dim) +
                          ") must be < encoder.width (" + std::to_string(e.width) + ")");
    if (e.width % e.n_heads != 0)
        throw ConfigError("encoder.width (" + std::to_string(e.width) +
                          ") must be divisible by encoder.n_heads (" + std::to_string(e.n_heads) + ")");
    if (d.resolution % d.patch_size != 0)
        throw ConfigError("decoder.resolution (" + std::to_string(d.resolution) +
                          ") must be divisible by decoder.patch_size (" +
                          std::to_string(d.patch_size) + ")");
    if (d.width != e.width)
        throw ConfigError("decoder.width (" + std::to_string(d.width) +
                          ") must equal encoder.width (" + std::to_string(e.width) + ")");
    if (d.latent_dim != e.latent_dim)
        throw ConfigError("decoder.latent_dim (" + std::to_string(d.latent_dim) +
                          ") must equal encoder.latent_dim (" + std::to_string(e.latent_dim) + ")");
    if (!(d.keep_ratio > 0.0 && d.keep_ratio <= 1.0))
        throw ConfigError("decoder.keep_ratio must be in (0, 1], got " + std::to_string(d.keep_ratio));
    if (cfg.fields.triplane_channels != d.triplane_channels)
        throw ConfigError("fields.triplane_channels (" + std::to_string(cfg.fields.triplane_channels) +
                          ") must equal decoder.triplane_channels (" +
                          std::to_string(d.triplane_channels) + ")");
}

Autoencoder::Autoencoder(const ModelConfig& c) : cfg(c) {
    validate(cfg);
    RandomStream rng(mix_seed(cfg.init_seed, 0x1717));
    enc = std::make_unique<encoder::Encoder>(params, cfg.encoder, rng);
    dec = std::make_unique<decoder::Decoder>(params, cfg.decoder, rng);
    field = std::make_unique<fields::FieldsNet>(params, cfg.fields, rng);
}

void Autoencoder::apply_stage_freeze(const std::string& stage) {
    params.freeze_all();
    if (stage == "ae") {
        params.unfreeze_prefix("enc.");
        params.unfreeze_prefix("dec.");
        params.unfreeze_prefix("fields.");
    } else if (stage == "vae") {
        params.unfreeze_prefix("kl.");
        params.unfreeze_prefix("latdec.");
    } else {
        throw ConfigError("unknown training stage: " + stage);
    }
}

fields::Triplane Autoencoder::to_triplane(const std::array<ad::Tensor, 3>& planes) const {
    fields::Triplane t;
    t.resolution = cfg.decoder.resolution;
    t.channels = cfg.decoder.triplane_channels;
    for (int p = 0; p < 3; ++p) t.planes[p] = planes[p].value();
    return t;
}

fields::OccupancyField Autoencoder::reconstruct_field(const geometry::Points& cloud,
                                                      std::uint64_t seed, bool through_vae,
                                                      double keep_ratio) const {
    ad::Tensor compact = enc->encode(cloud, seed);
    ad::Tensor decoder_input = compact;
    if (through_vae) {
        auto [mu, logvar] = enc->kl_compress(compact);
        decoder_input = dec->latent_decode(mu);  // eps = 0: z = mu
    }
    decoder::Decoder::Forward fw = dec->decode(decoder_input, keep_ratio);
    fields::OccupancyField f;
    f.triplane = to_triplane(fw.triplanes.full);
    f.mlp = field->export_mlp();
    return f;
}

}  // namespace shapecodec::model
