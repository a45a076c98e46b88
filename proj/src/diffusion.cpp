#include "shapecodec/diffusion.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

#include "shapecodec/errors.hpp"

namespace shapecodec::diffusion {

Preconditioning edm_preconditioning(double sigma, double sigma_data) {
    const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
    Preconditioning p;
    p.c_skip = d2 / (s2 + d2);
    p.c_out = sigma * sigma_data / std::sqrt(s2 + d2);
    p.c_in = 1.0 / std::sqrt(s2 + d2);
    p.c_noise = 0.25 * std::log(sigma);
    return p;
}

double edm_loss_weight(double sigma, double sigma_data) {
    const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
    return (s2 + d2) / (s2 * d2);
}

double sample_training_sigma(const DenoiserConfig& cfg, RandomStream& rng) {
    return std::exp(cfg.p_mean + cfg.p_std * rng.normal());
}

std::vector<double> sigma_ladder(const DenoiserConfig& cfg, int steps) {
    if (steps < 1) throw std::invalid_argument("sigma_ladder: steps must be >= 1");
    std::vector<double> sigmas(static_cast<size_t>(steps) + 1);
    const double inv_rho = 1.0 / cfg.rho;
    const double hi = std::pow(cfg.sigma_max, inv_rho);
    const double lo = std::pow(cfg.sigma_min, inv_rho);
    for (int i = 0; i < steps; ++i) {
        double t = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        sigmas[static_cast<size_t>(i)] = std::pow(hi + t * (lo - hi), cfg.rho);
    }
    sigmas[static_cast<size_t>(steps)] = 0.0;
    return sigmas;
}

namespace {

// fixed log-spaced frequencies for the noise-level embedding
Mat noise_features(double c_noise) {
    constexpr int kFreqs = 16;
    Mat row(1, 2 * kFreqs);
    for (int k = 0; k < kFreqs; ++k) {
        double omega = std::pow(2.0, k);
        row(0, k) = std::sin(c_noise * omega);
        row(0, kFreqs + k) = std::cos(c_noise * omega);
    }
    return row;
}

}  // namespace

Denoiser::Denoiser(nn::ParamStore& ps, const DenoiserConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    if (cfg.width % cfg.n_heads != 0)
        throw std::invalid_argument("denoiser width must be divisible by n_heads");
    in_ = nn::make_linear(ps, "dn.in", cfg.latent_dim, cfg.width, rng);
    out_ = nn::make_linear(ps, "dn.out", cfg.width, cfg.latent_dim, rng);
    index_embed_ = ps.create("dn.index_embed", cfg.n_latents, cfg.width, 0.02, rng);
    noise_fc1_ = nn::make_linear(ps, "dn.noise.fc1", 32, cfg.width, rng);
    noise_fc2_ = nn::make_linear(ps, "dn.noise.fc2", cfg.width, cfg.width, rng);
    if (cfg.n_classes > 0) class_embed_ = ps.create_zeros("dn.class_embed", cfg.n_classes, cfg.width);
    for (int i = 0; i < cfg.n_layers; ++i)
        blocks_.push_back(nn::make_block(ps, "dn.block" + std::to_string(i), cfg.width, cfg.n_heads, rng));
    final_ln_ = nn::make_layernorm(ps, "dn.final_ln", cfg.width);
}

Tensor Denoiser::denoise(const Tensor& z_noisy, double sigma, int class_id) const {
    if (sigma <= 0.0) throw std::invalid_argument("denoise: sigma must be > 0");
    if (z_noisy.rows() != cfg_.n_latents || z_noisy.cols() != cfg_.latent_dim)
        throw std::invalid_argument("denoise: latent shape mismatch (" +
                                    std::to_string(z_noisy.rows()) + "x" +
                                    std::to_string(z_noisy.cols()) + ")");
    if (class_id >= 0) {
        if (cfg_.n_classes <= 0)
            throw std::invalid_argument("denoise: class_id given to an unconditional model");
        if (class_id >= cfg_.n_classes)
            throw std::invalid_argument("denoise: unknown class_id " + std::to_string(class_id));
    }
    ++eval_count_;

    Preconditioning pc = edm_preconditioning(sigma, cfg_.sigma_data);
    Tensor x = in_(ad::scale(z_noisy, pc.c_in));
    x = ad::add(x, index_embed_);
    Tensor cond = noise_fc2_(ad::gelu(noise_fc1_(Tensor::constant(noise_features(pc.c_noise)))));
    if (class_id >= 0) {
        cond = ad::add(cond, ad::slice_rows(class_embed_, class_id, 1));
    }
    x = ad::add_rowvec(x, cond);
    for (const auto& blk : blocks_) x = blk.self_forward(x);
    Tensor f = out_(final_ln_(x));
    return ad::add(ad::scale(z_noisy, pc.c_skip), ad::scale(f, pc.c_out));
}

Mat Denoiser::denoise(const Mat& z_noisy, double sigma, int class_id) const {
    return denoise(Tensor::constant(z_noisy), sigma, class_id).value();
}

Tensor diffusion_loss(const Denoiser& d, const Mat& z0, const Mat& noise, double sigma,
                      int class_id) {
    if (z0.rows() != noise.rows() || z0.cols() != noise.cols())
        throw std::invalid_argument("diffusion_loss: z0/noise shape mismatch");
    Mat z_noisy = z0 + sigma * noise;
    Tensor denoised = d.denoise(Tensor::constant(z_noisy), sigma, class_id);
    Tensor err = ad::square(ad::sub(denoised, Tensor::constant(z0)));
    return ad::scale(ad::mean(err), edm_loss_weight(sigma, d.config().sigma_data));
}

Mat sample_ode(const DenoiseFn& denoise, int rows, int cols, const std::vector<double>& sigmas,
               RandomStream& rng, bool heun) {
    Mat x(rows, cols);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    x *= sigmas[0];

    const int steps = static_cast<int>(sigmas.size()) - 1;
    for (int i = 0; i < steps; ++i) {
        double s_cur = sigmas[static_cast<size_t>(i)];
        double s_next = sigmas[static_cast<size_t>(i) + 1];
        Mat slope = (x - denoise(x, s_cur)) / s_cur;
        Mat x_euler = x + (s_next - s_cur) * slope;
        if (heun && s_next > 0.0) {
            Mat slope2 = (x_euler - denoise(x_euler, s_next)) / s_next;
            x = x + (s_next - s_cur) * 0.5 * (slope + slope2);
        } else {
            x = x_euler;
        }
    }
    return x;
}

Mat sample_latents_one(const Denoiser& d, int steps, int class_id, RandomStream& rng, bool heun) {
    const auto& cfg = d.config();
    return sample_ode([&d, class_id](const Mat& z, double sigma) { return d.denoise(z, sigma, class_id); },
                      cfg.n_latents, cfg.latent_dim, sigma_ladder(cfg, steps), rng, heun);
}

LatentStats compute_latent_stats(const std::vector<Mat>& latents) {
    if (latents.empty()) throw std::invalid_argument("compute_latent_stats: no latents");
    const Eigen::Index d = latents[0].cols();
    LatentStats s;
    s.mean = Mat::Zero(1, d);
    s.std = Mat::Zero(1, d);
    long long rows = 0;
    for (const auto& z : latents) {
        s.mean.row(0) += z.colwise().sum();
        rows += z.rows();
    }
    s.mean /= static_cast<double>(rows);
    for (const auto& z : latents) {
        Mat centered = z.rowwise() - s.mean.row(0);
        s.std.row(0) += centered.array().square().colwise().sum().matrix();
    }
    s.std = (s.std / static_cast<double>(rows)).array().sqrt().matrix();
    for (Eigen::Index j = 0; j < d; ++j)
        if (s.std(0, j) < 1e-8) s.std(0, j) = 1.0;  // constant channel

    // global std after per-channel standardization is 1 by construction;
    // estimate it anyway and store what was measured
    double acc = 0.0;
    long long count = 0;
    for (const auto& z : latents) {
        Mat zs = (z.rowwise() - s.mean.row(0)).array().rowwise() / s.std.row(0).array();
        acc += zs.array().square().sum();
        count += zs.size();
    }
    s.sigma_data = std::sqrt(acc / static_cast<double>(count));
    return s;
}

Mat standardize(const Mat& z, const LatentStats& s) {
    return (z.rowwise() - s.mean.row(0)).array().rowwise() / s.std.row(0).array();
}

Mat destandardize(const Mat& z, const LatentStats& s) {
    return (z.array().rowwise() * s.std.row(0).array()).matrix().rowwise() + s.mean.row(0);
}

DiffusionTrainer::DiffusionTrainer(const config::Config& cfg, const model::Autoencoder& vae,
                                   const std::string& vae_hash, const data::Dataset& dataset,
                                   std::string out_dir)
    : cfg_(cfg), vae_hash_(vae_hash), out_dir_(std::move(out_dir)),
      rng_(mix_seed(cfg.seed, 0xD1FF)) {
    if (dataset.entries.empty()) throw DataError("diffusion training requires a non-empty dataset");
    if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);

    // eps=0 latents of every dataset shape through the frozen VAE
    std::vector<Mat> raw;
    raw.reserve(dataset.entries.size());
    for (size_t i = 0; i < dataset.entries.size(); ++i) {
        geometry::Points cloud = geometry::sample_surface_points(
            dataset.entries[i].shape, cfg.encoder.n_points, mix_seed(cfg.seed, 0xD1F0, i));
        ad::Tensor compact = vae.enc->encode(cloud, mix_seed(cfg.seed, 0xD1F1, i));
        auto [mu, logvar] = vae.enc->kl_compress(compact);
        raw.push_back(mu.value());
    }
    stats_ = compute_latent_stats(raw);
    latents_.reserve(raw.size());
    for (const auto& z : raw) latents_.push_back(standardize(z, stats_));

    DenoiserConfig dc;
    dc.n_latents = cfg.encoder.n_latents;
    dc.latent_dim = cfg.encoder.latent_dim;
    dc.n_layers = cfg.diffusion.n_layers;
    dc.width = cfg.diffusion.width;
    dc.n_heads = cfg.diffusion.n_heads;
    dc.n_classes = cfg.diffusion.n_classes;
    dc.sigma_data = stats_.sigma_data;
    dc.sigma_min = cfg.diffusion.sigma_min;
    dc.sigma_max = cfg.diffusion.sigma_max;
    dc.rho = cfg.diffusion.rho;
    dc.p_mean = cfg.diffusion.p_mean;
    dc.p_std = cfg.diffusion.p_std;
    RandomStream init_rng(mix_seed(cfg.seed, 0xD1F2));
    denoiser_ = std::make_unique<Denoiser>(params_, dc, init_rng);

    opt_.lr = cfg.training.lr;
    opt_.weight_decay = cfg.training.weight_decay;
}

double DiffusionTrainer::step(long long step_index) {
    const std::uint64_t s = static_cast<std::uint64_t>(step_index);
    int idx = static_cast<int>(mix_seed(cfg_.seed, s, 0xD201) % latents_.size());
    RandomStream step_rng(mix_seed(cfg_.seed, s, 0xD202));
    double sigma = sample_training_sigma(denoiser_->config(), step_rng);
    Mat noise(latents_[0].rows(), latents_[0].cols());
    for (Eigen::Index i = 0; i < noise.rows(); ++i)
        for (Eigen::Index j = 0; j < noise.cols(); ++j) noise(i, j) = step_rng.normal();

    int class_id = denoiser_->config().n_classes > 0
                       ? idx % denoiser_->config().n_classes
                       : -1;
    params_.zero_grads();
    Tensor loss = diffusion_loss(*denoiser_, latents_[static_cast<size_t>(idx)], noise, sigma,
                                 class_id);
    double loss_val = loss.scalar();
    if (!std::isfinite(loss_val))
        throw NumericError("non-finite diffusion loss at step " + std::to_string(step_index));
    ad::backward(loss);
    opt_.step(params_);
    completed_steps_ = step_index;
    return loss_val;
}

std::string DiffusionTrainer::train() {
    io::JsonlLogger log(out_dir_ + "/train_diffusion.jsonl");
    const long long total = cfg_.training.steps_diffusion;
    double ema = 0.0;
    for (long long s = completed_steps_ + 1; s <= total; ++s) {
        double loss = step(s);
        ema = s == 1 ? loss : 0.98 * ema + 0.02 * loss;
        if (cfg_.training.log_interval > 0 && s % cfg_.training.log_interval == 0)
            log.log({{"step", s}, {"stage", "diffusion"}, {"loss", loss}, {"loss_ema", ema}});
    }
    std::string path = out_dir_ + "/ckpt_diffusion_final.ckpt";
    save_checkpoint_file(total, path);
    return path;
}

void DiffusionTrainer::save_checkpoint_file(long long step, const std::string& path) {
    io::Checkpoint ckpt;
    ckpt.stage = "diffusion";
    ckpt.step = step;
    ckpt.opt_step = opt_.step_count();
    ckpt.config = config::to_json(cfg_);
    ckpt.rng = rng_.save_state();
    ckpt.extra["vae_hash"] = vae_hash_;
    ckpt.extra["sigma_data"] = stats_.sigma_data;
    std::vector<double> mean_v(stats_.mean.data(), stats_.mean.data() + stats_.mean.size());
    std::vector<double> std_v(stats_.std.data(), stats_.std.data() + stats_.std.size());
    ckpt.extra["latent_mean"] = mean_v;
    ckpt.extra["latent_std"] = std_v;
    for (const auto& [name, t] : params_.all()) ckpt.arrays.emplace(name, t.value());
    for (const auto& [name, mv] : opt_.moments()) {
        ckpt.arrays.emplace("opt.m." + name, mv.first);
        ckpt.arrays.emplace("opt.v." + name, mv.second);
    }
    io::save_checkpoint(ckpt, path);
}

void DiffusionTrainer::restore(const io::Checkpoint& ckpt) {
    for (const auto& [name, t] : params_.all()) {
        auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end()) throw DataError("diffusion checkpoint missing parameter: " + name);
        ad::Tensor p = t;
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

LoadedDenoiser load_denoiser(const io::Checkpoint& ckpt) {
    if (ckpt.stage != "diffusion")
        throw ConfigError("expected a diffusion checkpoint, found stage '" + ckpt.stage + "'");
    config::Config cfg = config::from_json(ckpt.config);

    LoadedDenoiser out;
    out.vae_hash = ckpt.extra.value("vae_hash", std::string());
    out.stats.sigma_data = ckpt.extra.at("sigma_data").get<double>();
    std::vector<double> mean_v = ckpt.extra.at("latent_mean").get<std::vector<double>>();
    std::vector<double> std_v = ckpt.extra.at("latent_std").get<std::vector<double>>();
    out.stats.mean = Eigen::Map<const Eigen::RowVectorXd>(mean_v.data(),
                                                          static_cast<Eigen::Index>(mean_v.size()));
    out.stats.std = Eigen::Map<const Eigen::RowVectorXd>(std_v.data(),
                                                         static_cast<Eigen::Index>(std_v.size()));

    DenoiserConfig dc;
    dc.n_latents = cfg.encoder.n_latents;
    dc.latent_dim = cfg.encoder.latent_dim;
    dc.n_layers = cfg.diffusion.n_layers;
    dc.width = cfg.diffusion.width;
    dc.n_heads = cfg.diffusion.n_heads;
    dc.n_classes = cfg.diffusion.n_classes;
    dc.sigma_data = out.stats.sigma_data;
    dc.sigma_min = cfg.diffusion.sigma_min;
    dc.sigma_max = cfg.diffusion.sigma_max;
    dc.rho = cfg.diffusion.rho;
    dc.p_mean = cfg.diffusion.p_mean;
    dc.p_std = cfg.diffusion.p_std;
    RandomStream rng(mix_seed(cfg.seed, 0xD1F2));
    out.denoiser = std::make_unique<Denoiser>(out.params, dc, rng);

    for (const auto& [name, t] : out.params.all()) {
        auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end()) throw DataError("diffusion checkpoint missing parameter: " + name);
        ad::Tensor p = t;
        p.value_mut() = it->second;
    }
    return out;
}

std::vector<GeneratedSample> generate(const Denoiser& d, const LatentStats& stats,
                                      const model::Autoencoder& vae, int n, int steps, int class_id,
                                      std::uint64_t seed, int grid_r, bool multires,
                                      GenerateTimings* timings, bool heun) {
    using clock = std::chrono::steady_clock;
    if (d.config().n_latents != vae.cfg.encoder.n_latents ||
        d.config().latent_dim != vae.cfg.encoder.latent_dim)
        throw ConfigError("generate: denoiser latent shape (" + std::to_string(d.config().n_latents) +
                          "x" + std::to_string(d.config().latent_dim) +
                          ") does not match the VAE (" + std::to_string(vae.cfg.encoder.n_latents) +
                          "x" + std::to_string(vae.cfg.encoder.latent_dim) + ")");

    std::vector<GeneratedSample> out;
    out.reserve(static_cast<size_t>(n));
    auto t0 = clock::now();
    for (int i = 0; i < n; ++i) {
        int cls = class_id;
        if (cls < 0 && d.config().n_classes > 0) cls = i % d.config().n_classes;
        RandomStream rng(mix_seed(seed, static_cast<std::uint64_t>(i), 0x9E0));
        GeneratedSample s;
        s.latent = destandardize(sample_latents_one(d, steps, cls, rng, heun), stats);
        out.push_back(std::move(s));
    }
    auto t1 = clock::now();

    for (auto& s : out) {
        ad::Tensor decoded = vae.dec->latent_decode(ad::Tensor::constant(s.latent));
        decoder::Decoder::Forward fw = vae.dec->decode(decoded);
        fields::OccupancyField f;
        f.triplane = vae.to_triplane(fw.triplanes.full);
        f.mlp = vae.field->export_mlp();
        fields::OccupancyGrid grid =
            multires ? fields::multires_grid_eval(f, grid_r / 2, grid_r, 1, 1 << 15)
                     : fields::dense_grid_eval(f, grid_r, 1 << 15);
        s.mesh = fields::extract_mesh(grid, 0.5);
    }
    auto t2 = clock::now();

    if (timings) {
        timings->sampling_s = std::chrono::duration<double>(t1 - t0).count();
        timings->decoding_s = std::chrono::duration<double>(t2 - t1).count();
        timings->full_s = std::chrono::duration<double>(t2 - t0).count();
    }
    return out;
}

}  // namespace shapecodec::diffusion
