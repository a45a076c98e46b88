#pragma once

#include <cstdint>
#include <memory>

#include "shapecodec/decoder.hpp"
#include "shapecodec/encoder.hpp"
#include "shapecodec/fields.hpp"
#include "shapecodec/nn.hpp"

namespace shapecodec::model {

struct ModelConfig {
    encoder::EncoderConfig encoder;
    decoder::DecoderConfig decoder;
    fields::FieldsConfig fields;
    std::uint64_t init_seed = 0;
};

void validate(const ModelConfig& cfg);

// Encoder + decoder + occupancy MLP sharing one parameter store. Parameter
// names are stable, so checkpoints rebuild the model from its config and
// load arrays by name.
struct Autoencoder {
    ModelConfig cfg;
    nn::ParamStore params;
    std::unique_ptr<encoder::Encoder> enc;
    std::unique_ptr<decoder::Decoder> dec;
    std::unique_ptr<fields::FieldsNet> field;

    explicit Autoencoder(const ModelConfig& c);

    // Freeze layout for the two training stages: stage 1 trains everything
    // except the KL block and the latent decoder; stage 2 trains only those.
    void apply_stage_freeze(const std::string& stage);

    fields::Triplane to_triplane(const std::array<ad::Tensor, 3>& planes) const;

    // Deterministic reconstruction field. through_vae runs
    // encode -> KL(mu, eps=0) -> latent decode; otherwise the compact
    // features feed the decoder directly (stage-1 autoencoder path).
    fields::OccupancyField reconstruct_field(const geometry::Points& cloud, std::uint64_t seed,
                                             bool through_vae, double keep_ratio = -1.0) const;
};

}  // namespace shapecodec::model
