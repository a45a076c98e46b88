#pragma once

#include <string>
#include <vector>

#include "shapecodec/config.hpp"
#include "shapecodec/data.hpp"
#include "shapecodec/io.hpp"
#include "shapecodec/model.hpp"
#include "shapecodec/nn.hpp"

namespace shapecodec::diffusion {

using ad::Mat;
using ad::Tensor;

struct DenoiserConfig {
    int n_latents = 32;  // M
    int latent_dim = 32; // D
    int n_layers = 8;
    int width = 256;
    int n_heads = 8;
    int n_classes = 0;  // 0 = unconditional
    double sigma_data = 1.0;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double p_mean = -1.2;
    double p_std = 1.2;
};

struct Preconditioning {
    double c_skip, c_out, c_in, c_noise;
};

Preconditioning edm_preconditioning(double sigma, double sigma_data);
double edm_loss_weight(double sigma, double sigma_data);
// log-normal proposal: ln(sigma) ~ N(p_mean, p_std^2)
double sample_training_sigma(const DenoiserConfig& cfg, RandomStream& rng);
// rho-spaced ladder from sigma_max down to sigma_min, with a final 0 entry.
std::vector<double> sigma_ladder(const DenoiserConfig& cfg, int steps);

// Preconditioned transformer denoiser over the M latent tokens. Latent
// order is fixed by learned per-index embeddings; noise level and class
// condition through vectors added to every token. The class embedding is
// zero-initialized, so an untrained network is class-invariant.
class Denoiser {
public:
    Denoiser(nn::ParamStore& ps, const DenoiserConfig& cfg, RandomStream& rng);

    // class_id < 0 means unconditional; out-of-range ids are rejected.
    Tensor denoise(const Tensor& z_noisy, double sigma, int class_id = -1) const;
    Mat denoise(const Mat& z_noisy, double sigma, int class_id = -1) const;

    const DenoiserConfig& config() const { return cfg_; }
    long long eval_count() const { return eval_count_; }
    void reset_eval_count() { eval_count_ = 0; }

private:
    DenoiserConfig cfg_;
    nn::Linear in_, out_;
    Tensor index_embed_;  // M x width
    nn::Linear noise_fc1_, noise_fc2_;
    Tensor class_embed_;  // n_classes x width, zero init
    std::vector<nn::AttentionBlock> blocks_;
    nn::LayerNorm final_ln_;
    mutable long long eval_count_ = 0;
};

// lambda(sigma)-weighted squared error between the denoised estimate of
// z0 + sigma*noise and z0 (mean over elements).
Tensor diffusion_loss(const Denoiser& d, const Mat& z0, const Mat& noise, double sigma,
                      int class_id = -1);

// Deterministic EDM ODE sampler; Heun uses 2*steps-1 denoiser evaluations,
// Euler exactly `steps`. The function form lets tests drive the solver with
// stub denoisers.
using DenoiseFn = std::function<Mat(const Mat&, double)>;
Mat sample_ode(const DenoiseFn& denoise, int rows, int cols, const std::vector<double>& sigmas,
               RandomStream& rng, bool heun);
Mat sample_latents_one(const Denoiser& d, int steps, int class_id, RandomStream& rng,
                       bool heun = true);

struct LatentStats {
    Mat mean;  // 1 x D
    Mat std;   // 1 x D
    double sigma_data = 1.0;
};

// Per-channel standardization statistics over a stack of latent sets.
LatentStats compute_latent_stats(const std::vector<Mat>& latents);
Mat standardize(const Mat& z, const LatentStats& s);
Mat destandardize(const Mat& z, const LatentStats& s);

// Diffusion stage: trains the denoiser on the eps=0 VAE latents of the
// dataset. Checkpoints embed the VAE checkpoint hash and latent statistics.
class DiffusionTrainer {
public:
    DiffusionTrainer(const config::Config& cfg, const model::Autoencoder& vae,
                     const std::string& vae_hash, const data::Dataset& dataset,
                     std::string out_dir);

    double step(long long step_index);  // returns the loss
    std::string train();                // full loop; returns checkpoint path
    void save_checkpoint_file(long long step, const std::string& path);
    void restore(const io::Checkpoint& ckpt);
    long long completed_steps() const { return completed_steps_; }

    Denoiser& denoiser() { return *denoiser_; }
    const LatentStats& latent_stats() const { return stats_; }
    const std::vector<Mat>& training_latents() const { return latents_; }

private:
    config::Config cfg_;
    std::string vae_hash_;
    std::string out_dir_;
    nn::ParamStore params_;
    std::unique_ptr<Denoiser> denoiser_;
    std::vector<Mat> latents_;  // standardized
    LatentStats stats_;
    nn::AdamW opt_;
    RandomStream rng_;
    long long completed_steps_ = 0;
};

struct GenerateTimings {
    double sampling_s = 0.0;
    double decoding_s = 0.0;
    double full_s = 0.0;
};

struct GeneratedSample {
    Mat latent;  // destandardized M x D
    mesh::Mesh mesh;
};

// sample -> latent decode -> decoder -> fields -> mesh, with per-stage
// timing. class_id applies to all samples; -1 cycles through classes when
// the denoiser is conditional.
std::vector<GeneratedSample> generate(const Denoiser& d, const LatentStats& stats,
                                      const model::Autoencoder& vae, int n, int steps, int class_id,
                                      std::uint64_t seed, int grid_r, bool multires,
                                      GenerateTimings* timings = nullptr, bool heun = true);

struct LoadedDenoiser {
    nn::ParamStore params;
    std::unique_ptr<Denoiser> denoiser;
    LatentStats stats;
    std::string vae_hash;
};

// Rebuild a denoiser (plus latent statistics and the VAE hash it was trained
// against) from a diffusion checkpoint.
LoadedDenoiser load_denoiser(const io::Checkpoint& ckpt);

}  // namespace shapecodec::diffusion
