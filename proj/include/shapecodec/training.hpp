#pragma once

#include <string>

#include "shapecodec/config.hpp"
#include "shapecodec/data.hpp"
#include "shapecodec/io.hpp"
#include "shapecodec/model.hpp"

namespace shapecodec::training {

using ad::Tensor;

// Mean BCE over the volume partition plus near_weight times the mean BCE
// over the near-surface partition. logits are Q x 1, volume samples first.
Tensor recon_loss(const Tensor& logits, const Eigen::VectorXd& labels, int n_vol,
                  double near_weight);

// Per-query BCE values clipped to [0,1]; used (detached) as the regression
// targets of the uncertainty head.
Eigen::VectorXd per_query_bce(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels);

// MSE between retrieved query-wise uncertainty and the clipped targets.
Tensor uncertainty_loss(const Tensor& u, const Eigen::VectorXd& targets);

// mean of 0.5*(mu^2 + exp(logvar) - logvar - 1)
Tensor kl_loss(const Tensor& mu, const Tensor& logvar);

// MSE between row-normalized features (zero mean/unit variance per row, no
// learned affine).
Tensor feature_matching_loss(const Tensor& decoded, const Tensor& reference);

struct StepLosses {
    double total = 0, recon_full = 0, recon_init = 0, unc = 0, kl = 0, fm = 0;
};

// Single-process two-stage optimization. Every step is a pure function of
// (seed, stage, step index), so interrupted runs resume exactly.
class Trainer {
public:
    Trainer(model::Autoencoder& model, const config::Config& cfg, const data::Dataset& dataset,
            std::string out_dir);

    // One optimization step at the given index (1-based).
    StepLosses step(const std::string& stage, long long step_index);

    // Full loop for "ae" or "vae"; writes checkpoints and a JSONL metric
    // log; returns the final checkpoint path.
    std::string train(const std::string& stage);

    void save_checkpoint_file(const std::string& stage, long long step, const std::string& path);
    void restore(const io::Checkpoint& ckpt);

    long long completed_steps() const { return completed_steps_; }
    nn::AdamW& optimizer() { return opt_; }

    // Mean volumetric IoU of reconstructions over the first n_shapes dataset
    // entries, with eps=0 latents when through_vae.
    double eval_mean_iou(int n_shapes, int n_queries, bool through_vae) const;

    struct Batch {
        int shape_index = 0;
        geometry::Points cloud;
        std::vector<int> anchors;
        geometry::QueryBatch queries;
        ad::Mat vae_noise;
    };
    Batch make_batch(const std::string& stage, long long step_index) const;

private:
    StepLosses losses_stage1(const Batch& batch, Tensor* total_out);
    StepLosses losses_stage2(const Batch& batch, Tensor* total_out);
    double lr_at(long long step_index) const;
    void dump_nan_diagnostics(const std::string& stage, long long step_index, const Batch& batch,
                              const StepLosses& losses) const;

    model::Autoencoder& model_;
    config::Config cfg_;
    const data::Dataset& dataset_;
    std::string out_dir_;
    nn::AdamW opt_;
    RandomStream rng_;
    long long completed_steps_ = 0;
};

// Copies checkpoint arrays into the model parameters (names must match the
// model built from the checkpoint's config).
void restore_model_params(model::Autoencoder& m, const io::Checkpoint& ckpt);

// Rebuild an autoencoder from a checkpoint's config snapshot and load its
// parameters.
std::unique_ptr<model::Autoencoder> load_autoencoder(const io::Checkpoint& ckpt);

}  // namespace shapecodec::training
