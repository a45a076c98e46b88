#include "shapecodec/training.hpp"

#include <cmath>
#include <filesystem>

#include "shapecodec/errors.hpp"
#include "shapecodec/metrics.hpp"

namespace shapecodec::training {

namespace {
constexpr std::uint64_t kTagShape = 0xB1;
constexpr std::uint64_t kTagCloud = 0xB2;
constexpr std::uint64_t kTagQueries = 0xB3;
constexpr std::uint64_t kTagAnchors = 0xB4;
constexpr std::uint64_t kTagNoise = 0xB5;

std::uint64_t stage_tag(const std::string& stage) { return stage == "vae" ? 2 : 1; }
}  // namespace

Tensor recon_loss(const Tensor& logits, const Eigen::VectorXd& labels, int n_vol,
                  double near_weight) {
    if (logits.cols() != 1 || logits.rows() != labels.size())
        throw std::invalid_argument("recon_loss: expected Q x 1 logits matching labels");
    if (!logits.value().allFinite()) throw NumericError("recon_loss: non-finite logits");
    const int n_near = static_cast<int>(labels.size()) - n_vol;
    Tensor bce = ad::bce_with_logits(logits, labels);
    Tensor loss;
    if (n_vol > 0) loss = ad::mean(ad::slice_rows(bce, 0, n_vol));
    if (n_near > 0) {
        Tensor near_term = ad::scale(ad::mean(ad::slice_rows(bce, n_vol, n_near)), near_weight);
        loss = loss.defined() ? ad::add(loss, near_term) : near_term;
    }
    if (!loss.defined()) throw std::invalid_argument("recon_loss: empty query batch");
    return loss;
}

Eigen::VectorXd per_query_bce(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels) {
    Eigen::VectorXd out(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        double x = logits(i), y = labels(i);
        double raw = std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        out(i) = std::clamp(raw, 0.0, 1.0);
    }
    return out;
}

Tensor uncertainty_loss(const Tensor& u, const Eigen::VectorXd& targets) {
    if (u.cols() != 1 || u.rows() != targets.size())
        throw std::invalid_argument("uncertainty_loss: expected Q x 1 u matching targets");
    return ad::mean(ad::square(ad::sub(u, Tensor::constant(targets))));
}

Tensor kl_loss(const Tensor& mu, const Tensor& logvar) {
    Tensor term = ad::sub(ad::add(ad::square(mu), ad::expm(logvar)), logvar);
    return ad::scale(ad::mean(ad::add_scalar(term, -1.0)), 0.5);
}

Tensor feature_matching_loss(const Tensor& decoded, const Tensor& reference) {
    Tensor diff = ad::sub(ad::layernorm_rows(decoded), ad::layernorm_rows(reference));
    return ad::mean(ad::square(diff));
}

Trainer::Trainer(model::Autoencoder& model, const config::Config& cfg, const data::Dataset& dataset,
                 std::string out_dir)
    : model_(model), cfg_(cfg), dataset_(dataset), out_dir_(std::move(out_dir)),
      rng_(mix_seed(cfg.seed, 0x7247)) {
    if (dataset_.entries.empty()) throw DataError("training requires a non-empty dataset");
    opt_.lr = cfg_.training.lr;
    opt_.weight_decay = cfg_.training.weight_decay;
    if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
}

Trainer::Batch Trainer::make_batch(const std::string& stage, long long step_index) const {
    const std::uint64_t tag = stage_tag(stage);
    const std::uint64_t s = static_cast<std::uint64_t>(step_index);
    Batch b;
    b.shape_index = static_cast<int>(mix_seed(cfg_.seed, mix_seed(tag, s, kTagShape)) %
                                     dataset_.entries.size());
    const auto& shape = dataset_.entries[static_cast<size_t>(b.shape_index)].shape;
    b.cloud = geometry::sample_surface_points(shape, cfg_.encoder.n_points,
                                              mix_seed(cfg_.seed, mix_seed(tag, s, kTagCloud)));
    b.anchors = model_.enc->select_anchors(b.cloud, mix_seed(cfg_.seed, mix_seed(tag, s, kTagAnchors)));
    b.queries = geometry::sample_queries(shape, cfg_.geometry.n_vol, cfg_.geometry.n_near,
                                         cfg_.geometry.near_sigma,
                                         mix_seed(cfg_.seed, mix_seed(tag, s, kTagQueries)));
    if (stage == "vae") {
        RandomStream noise_rng(mix_seed(cfg_.seed, mix_seed(tag, s, kTagNoise)));
        b.vae_noise.resize(cfg_.encoder.n_latents, cfg_.encoder.latent_dim);
        for (Eigen::Index i = 0; i < b.vae_noise.rows(); ++i)
            for (Eigen::Index j = 0; j < b.vae_noise.cols(); ++j) b.vae_noise(i, j) = noise_rng.normal();
    }
    return b;
}

StepLosses Trainer::losses_stage1(const Batch& batch, Tensor* total_out) {
    const auto& tc = cfg_.training;
    Tensor compact = model_.enc->encode(Tensor::constant(batch.cloud), batch.anchors);
    decoder::Decoder::Forward fw = model_.dec->decode(compact);

    const int R = cfg_.decoder.resolution;
    Tensor logits_full = model_.field->query_logits(fw.triplanes.full, R, batch.queries.points);
    Tensor logits_init = model_.field->query_logits(fw.triplanes.base, R, batch.queries.points);

    Tensor recon_full = recon_loss(logits_full, batch.queries.labels, batch.queries.n_vol,
                                   tc.near_weight);
    Tensor recon_init = recon_loss(logits_init, batch.queries.labels, batch.queries.n_vol,
                                   tc.near_weight);

    Eigen::VectorXd targets = per_query_bce(logits_init.value().col(0), batch.queries.labels);
    Tensor u = fields::FieldsNet::uncertainty(fw.unc_logits, cfg_.decoder.tokens_per_side(),
                                              batch.queries.points);
    Tensor unc = uncertainty_loss(u, targets);

    Tensor total = ad::add(ad::add(recon_full, recon_init), ad::scale(unc, tc.lambda_unc));

    StepLosses out;
    out.recon_full = recon_full.scalar();
    out.recon_init = recon_init.scalar();
    out.unc = unc.scalar();
    out.total = total.scalar();
    *total_out = total;
    return out;
}

StepLosses Trainer::losses_stage2(const Batch& batch, Tensor* total_out) {
    const auto& tc = cfg_.training;
    // frozen encoder output; graph below it carries no gradient
    Tensor compact = model_.enc->encode(Tensor::constant(batch.cloud), batch.anchors);
    auto [mu, logvar] = model_.enc->kl_compress(compact);
    Tensor z = encoder::Encoder::reparameterize(mu, logvar, batch.vae_noise);
    Tensor decoded = model_.dec->latent_decode(z);

    Tensor fm = feature_matching_loss(decoded, compact);
    Tensor kl = kl_loss(mu, logvar);

    // reconstruction through the frozen decoder, gradients flowing only via
    // the decoded features
    decoder::Decoder::Forward fw = model_.dec->decode(decoded);
    const int R = cfg_.decoder.resolution;
    Tensor logits_full = model_.field->query_logits(fw.triplanes.full, R, batch.queries.points);
    Tensor logits_init = model_.field->query_logits(fw.triplanes.base, R, batch.queries.points);
    Tensor recon_full = recon_loss(logits_full, batch.queries.labels, batch.queries.n_vol,
                                   tc.near_weight);
    Tensor recon_init = recon_loss(logits_init, batch.queries.labels, batch.queries.n_vol,
                                   tc.near_weight);
    Eigen::VectorXd targets = per_query_bce(logits_init.value().col(0), batch.queries.labels);
    Tensor u = fields::FieldsNet::uncertainty(fw.unc_logits, cfg_.decoder.tokens_per_side(),
                                              batch.queries.points);
    Tensor unc = uncertainty_loss(u, targets);
    Tensor embedded_ae = ad::add(ad::add(recon_full, recon_init), ad::scale(unc, tc.lambda_unc));

    Tensor total = ad::add(ad::add(fm, embedded_ae), ad::scale(kl, tc.lambda_kl));

    StepLosses out;
    out.fm = fm.scalar();
    out.kl = kl.scalar();
    out.recon_full = recon_full.scalar();
    out.recon_init = recon_init.scalar();
    out.unc = unc.scalar();
    out.total = total.scalar();
    *total_out = total;
    return out;
}

double Trainer::lr_at(long long step_index) const {
    double lr = cfg_.training.lr;
    for (long long milestone : cfg_.training.lr_decay_steps)
        if (step_index > milestone) lr *= cfg_.training.lr_decay_factor;
    return lr;
}

StepLosses Trainer::step(const std::string& stage, long long step_index) {
    model_.apply_stage_freeze(stage);
    Batch batch = make_batch(stage, step_index);

    model_.params.zero_grads();
    Tensor total;
    StepLosses losses;
    try {
        losses = stage == "vae" ? losses_stage2(batch, &total) : losses_stage1(batch, &total);
    } catch (const NumericError&) {
        dump_nan_diagnostics(stage, step_index, batch, losses);
        throw;
    }
    if (!std::isfinite(losses.total)) {
        dump_nan_diagnostics(stage, step_index, batch, losses);
        throw NumericError("non-finite loss at " + stage + " step " + std::to_string(step_index));
    }
    ad::backward(total);
    opt_.lr = lr_at(step_index);
    opt_.step(model_.params);
    completed_steps_ = step_index;
    return losses;
}

void Trainer::dump_nan_diagnostics(const std::string& stage, long long step_index,
                                   const Batch& batch, const StepLosses& losses) const {
    if (out_dir_.empty()) return;
    nlohmann::json dump;
    dump["stage"] = stage;
    dump["step"] = step_index;
    dump["shape_index"] = batch.shape_index;
    dump["losses"] = {{"total", losses.total},   {"recon_full", losses.recon_full},
                      {"recon_init", losses.recon_init}, {"unc", losses.unc},
                      {"kl", losses.kl},         {"fm", losses.fm}};
    dump["cloud_rows"] = batch.cloud.rows();
    dump["query_rows"] = batch.queries.points.rows();
    std::ofstream out(out_dir_ + "/nan_dump.json");
    out << dump.dump(2) << '\n';
}

std::string Trainer::train(const std::string& stage) {
    const long long total_steps = stage == "vae" ? cfg_.training.steps_vae : cfg_.training.steps_ae;
    io::JsonlLogger log(out_dir_ + "/train_" + stage + ".jsonl");

    for (long long s = completed_steps_ + 1; s <= total_steps; ++s) {
        StepLosses losses = step(stage, s);
        if (cfg_.training.log_interval > 0 && s % cfg_.training.log_interval == 0) {
            nlohmann::json rec = {{"step", s},
                                  {"stage", stage},
                                  {"loss", losses.total},
                                  {"recon_full", losses.recon_full},
                                  {"recon_init", losses.recon_init},
                                  {"unc", losses.unc}};
            if (stage == "vae") {
                rec["fm"] = losses.fm;
                rec["kl"] = losses.kl;
            }
            rec["lr"] = opt_.lr;
            log.log(rec);
        }
        if (cfg_.training.eval_interval > 0 && s % cfg_.training.eval_interval == 0) {
            double iou = eval_mean_iou(std::min<int>(4, static_cast<int>(dataset_.entries.size())),
                                       cfg_.training.eval_queries, stage == "vae");
            log.log({{"step", s}, {"stage", stage}, {"iou", iou}});
        }
        if (cfg_.training.checkpoint_interval > 0 && s % cfg_.training.checkpoint_interval == 0) {
            save_checkpoint_file(stage, s,
                                 out_dir_ + "/ckpt_" + stage + "_" + std::to_string(s) + ".ckpt");
        }
    }

    double iou = eval_mean_iou(std::min<int>(8, static_cast<int>(dataset_.entries.size())),
                               cfg_.training.eval_queries, stage == "vae");
    log.log({{"step", total_steps}, {"stage", stage}, {"final_iou", iou}});
    std::string path = out_dir_ + "/ckpt_" + stage + "_final.ckpt";
    save_checkpoint_file(stage, total_steps, path);
    return path;
}

void Trainer::save_checkpoint_file(const std::string& stage, long long step,
                                   const std::string& path) {
    io::Checkpoint ckpt;
    ckpt.stage = stage;
    ckpt.step = step;
    ckpt.opt_step = opt_.step_count();
    ckpt.config = config::to_json(cfg_);
    ckpt.rng = rng_.save_state();
    for (const auto& [name, t] : model_.params.all()) ckpt.arrays.emplace(name, t.value());
    for (const auto& [name, mv] : opt_.moments()) {
        ckpt.arrays.emplace("opt.m." + name, mv.first);
        ckpt.arrays.emplace("opt.v." + name, mv.second);
    }
    io::save_checkpoint(ckpt, path);
}

void Trainer::restore(const io::Checkpoint& ckpt) {
    for (const auto& [name, t] : model_.params.all()) {
        auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end()) throw DataError("checkpoint missing parameter: " + name);
        if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
            throw DataError("checkpoint parameter shape mismatch: " + name);
        Tensor p = t;
        p.value_mut() = it->second;
    }
    opt_.moments().clear();
    for (const auto& [name, m] : ckpt.arrays) {
        if (name.rfind("opt.m.", 0) == 0) opt_.moments()[name.substr(6)].first = m;
        else if (name.rfind("opt.v.", 0) == 0) opt_.moments()[name.substr(6)].second = m;
    }
    opt_.set_step_count(ckpt.opt_step);
    rng_.restore_state(ckpt.rng);
    completed_steps_ = ckpt.step;
}

void restore_model_params(model::Autoencoder& m, const io::Checkpoint& ckpt) {
    for (const auto& [name, t] : m.params.all()) {
        auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end()) throw DataError("checkpoint missing parameter: " + name);
        if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
            throw DataError("checkpoint parameter shape mismatch: " + name);
        Tensor p = t;
        p.value_mut() = it->second;
    }
}

std::unique_ptr<model::Autoencoder> load_autoencoder(const io::Checkpoint& ckpt) {
    config::Config cfg = config::from_json(ckpt.config);
    auto m = std::make_unique<model::Autoencoder>(config::model_config(cfg));
    restore_model_params(*m, ckpt);
    return m;
}

double Trainer::eval_mean_iou(int n_shapes, int n_queries, bool through_vae) const {
    n_shapes = std::min<int>(n_shapes, static_cast<int>(dataset_.entries.size()));
    double sum = 0.0;
    for (int i = 0; i < n_shapes; ++i) {
        const auto& shape = dataset_.entries[static_cast<size_t>(i)].shape;
        geometry::Points cloud = geometry::sample_surface_points(
            shape, cfg_.encoder.n_points, mix_seed(cfg_.seed, 0xE7A1, static_cast<std::uint64_t>(i)));
        fields::OccupancyField f = model_.reconstruct_field(
            cloud, mix_seed(cfg_.seed, 0xE7A2, static_cast<std::uint64_t>(i)), through_vae);
        sum += metrics::iou_volumetric(
            [&f](const geometry::Vec3& p) {
                geometry::Points q(1, 3);
                q.row(0) = p;
                return fields::query_occupancy_logits(f, q)(0) > 0.0;
            },
            [&shape](const geometry::Vec3& p) { return shape.contains(p); }, n_queries,
            mix_seed(cfg_.seed, 0xE7A3, static_cast<std::uint64_t>(i)));
    }
    return n_shapes > 0 ? sum / n_shapes : 0.0;
}

}  // namespace shapecodec::training
