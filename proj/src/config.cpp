#include "shapecodec/config.hpp"

#include <fstream>
#include <set>

#include "shapecodec/errors.hpp"

namespace shapecodec::config {

using nlohmann::json;

namespace {

void expect_keys(const json& j, const std::string& path, const std::set<std::string>& known) {
    if (!j.is_object()) throw ConfigError("config section '" + path + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key()))
            throw ConfigError("unknown config key: " + (path.empty() ? it.key() : path + "." + it.key()));
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const Config& c) {
    json j;
    j["seed"] = c.seed;
    j["geometry"] = {
        {"dataset_count", c.geometry.dataset_count},
        {"near_sigma", c.geometry.near_sigma},
        {"n_vol", c.geometry.n_vol},
        {"n_near", c.geometry.n_near},
    };
    j["encoder"] = {
        {"n_points", c.encoder.n_points},
        {"n_patches", c.encoder.n_patches},
        {"n_latents", c.encoder.n_latents},
        {"width", c.encoder.width},
        {"latent_dim", c.encoder.latent_dim},
        {"n_blocks", c.encoder.n_blocks},
        {"n_heads", c.encoder.n_heads},
        {"position_mode",
         c.encoder.position_mode == encoder::PositionMode::InputDependent ? "input-dependent"
                                                                          : "learnable"},
        {"posembed_sigma", c.encoder.posembed_sigma},
    };
    j["decoder"] = {
        {"resolution", c.decoder.resolution},
        {"patch_size", c.decoder.patch_size},
        {"triplane_channels", c.decoder.triplane_channels},
        {"n_layers", c.decoder.n_layers},
        {"n_latent_layers", c.decoder.n_latent_layers},
        {"n_merged", c.decoder.n_merged},
        {"keep_ratio", c.decoder.keep_ratio},
    };
    j["fields"] = {
        {"mlp_hidden", c.fields.mlp_hidden},
        {"grid_resolution", c.fields.grid_resolution},
        {"chunk", c.fields.chunk},
        {"multires_coarse", c.fields.multires_coarse},
        {"multires_dilation", c.fields.multires_dilation},
        {"iso_threshold", c.fields.iso_threshold},
    };
    j["training"] = {
        {"lr", c.training.lr},
        {"weight_decay", c.training.weight_decay},
        {"lambda_unc", c.training.lambda_unc},
        {"lambda_kl", c.training.lambda_kl},
        {"near_weight", c.training.near_weight},
        {"steps_ae", c.training.steps_ae},
        {"steps_vae", c.training.steps_vae},
        {"steps_diffusion", c.training.steps_diffusion},
        {"lr_decay_steps", c.training.lr_decay_steps},
        {"lr_decay_factor", c.training.lr_decay_factor},
        {"log_interval", c.training.log_interval},
        {"eval_interval", c.training.eval_interval},
        {"eval_queries", c.training.eval_queries},
        {"checkpoint_interval", c.training.checkpoint_interval},
    };
    j["diffusion"] = {
        {"n_layers", c.diffusion.n_layers},
        {"width", c.diffusion.width},
        {"n_heads", c.diffusion.n_heads},
        {"sigma_min", c.diffusion.sigma_min},
        {"sigma_max", c.diffusion.sigma_max},
        {"rho", c.diffusion.rho},
        {"p_mean", c.diffusion.p_mean},
        {"p_std", c.diffusion.p_std},
        {"n_classes", c.diffusion.n_classes},
        {"sample_steps", c.diffusion.sample_steps},
        {"sampler", c.diffusion.sampler},
    };
    j["metrics"] = {
        {"iou_queries", c.metrics.iou_queries},
        {"cd_points", c.metrics.cd_points},
        {"f1_tau", c.metrics.f1_tau},
        {"set_points", c.metrics.set_points},
    };
    return j;
}

Config from_json(const json& j) {
    Config c;
    expect_keys(j, "", {"seed", "geometry", "encoder", "decoder", "fields", "training", "diffusion",
                        "metrics"});
    read(j, "seed", c.seed);

    if (j.contains("geometry")) {
        const json& g = j.at("geometry");
        expect_keys(g, "geometry", {"dataset_count", "near_sigma", "n_vol", "n_near"});
        read(g, "dataset_count", c.geometry.dataset_count);
        read(g, "near_sigma", c.geometry.near_sigma);
        read(g, "n_vol", c.geometry.n_vol);
        read(g, "n_near", c.geometry.n_near);
    }
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        expect_keys(e, "encoder",
                    {"n_points", "n_patches", "n_latents", "width", "latent_dim", "n_blocks",
                     "n_heads", "position_mode", "posembed_sigma"});
        read(e, "n_points", c.encoder.n_points);
        read(e, "n_patches", c.encoder.n_patches);
        read(e, "n_latents", c.encoder.n_latents);
        read(e, "width", c.encoder.width);
        read(e, "latent_dim", c.encoder.latent_dim);
        read(e, "n_blocks", c.encoder.n_blocks);
        read(e, "n_heads", c.encoder.n_heads);
        read(e, "posembed_sigma", c.encoder.posembed_sigma);
        if (e.contains("position_mode")) {
            std::string m = e.at("position_mode").get<std::string>();
            if (m == "input-dependent") c.encoder.position_mode = encoder::PositionMode::InputDependent;
            else if (m == "learnable") c.encoder.position_mode = encoder::PositionMode::Learnable;
            else throw ConfigError("encoder.position_mode must be 'input-dependent' or 'learnable'");
        }
    }
    if (j.contains("decoder")) {
        const json& d = j.at("decoder");
        expect_keys(d, "decoder",
                    {"resolution", "patch_size", "triplane_channels", "n_layers", "n_latent_layers",
                     "n_merged", "keep_ratio"});
        read(d, "resolution", c.decoder.resolution);
        read(d, "patch_size", c.decoder.patch_size);
        read(d, "triplane_channels", c.decoder.triplane_channels);
        read(d, "n_layers", c.decoder.n_layers);
        read(d, "n_latent_layers", c.decoder.n_latent_layers);
        read(d, "n_merged", c.decoder.n_merged);
        read(d, "keep_ratio", c.decoder.keep_ratio);
    }
    if (j.contains("fields")) {
        const json& f = j.at("fields");
        expect_keys(f, "fields",
                    {"mlp_hidden", "grid_resolution", "chunk", "multires_coarse", "multires_dilation",
                     "iso_threshold"});
        read(f, "mlp_hidden", c.fields.mlp_hidden);
        read(f, "grid_resolution", c.fields.grid_resolution);
        read(f, "chunk", c.fields.chunk);
        read(f, "multires_coarse", c.fields.multires_coarse);
        read(f, "multires_dilation", c.fields.multires_dilation);
        read(f, "iso_threshold", c.fields.iso_threshold);
    }
    if (j.contains("training")) {
        const json& t = j.at("training");
        expect_keys(t, "training",
                    {"lr", "weight_decay", "lambda_unc", "lambda_kl", "near_weight", "steps_ae",
                     "steps_vae", "steps_diffusion", "lr_decay_steps", "lr_decay_factor",
                     "log_interval", "eval_interval", "eval_queries", "checkpoint_interval"});
        read(t, "lr", c.training.lr);
        read(t, "weight_decay", c.training.weight_decay);
        read(t, "lambda_unc", c.training.lambda_unc);
        read(t, "lambda_kl", c.training.lambda_kl);
        read(t, "near_weight", c.training.near_weight);
        read(t, "steps_ae", c.training.steps_ae);
        read(t, "steps_vae", c.training.steps_vae);
        read(t, "steps_diffusion", c.training.steps_diffusion);
        read(t, "lr_decay_steps", c.training.lr_decay_steps);
        read(t, "lr_decay_factor", c.training.lr_decay_factor);
        read(t, "log_interval", c.training.log_interval);
        read(t, "eval_interval", c.training.eval_interval);
        read(t, "eval_queries", c.training.eval_queries);
        read(t, "checkpoint_interval", c.training.checkpoint_interval);
    }
    if (j.contains("diffusion")) {
        const json& d = j.at("diffusion");
        expect_keys(d, "diffusion",
                    {"n_layers", "width", "n_heads", "sigma_min", "sigma_max", "rho", "p_mean",
                     "p_std", "n_classes", "sample_steps", "sampler"});
        read(d, "n_layers", c.diffusion.n_layers);
        read(d, "width", c.diffusion.width);
        read(d, "n_heads", c.diffusion.n_heads);
        read(d, "sigma_min", c.diffusion.sigma_min);
        read(d, "sigma_max", c.diffusion.sigma_max);
        read(d, "rho", c.diffusion.rho);
        read(d, "p_mean", c.diffusion.p_mean);
        read(d, "p_std", c.diffusion.p_std);
        read(d, "n_classes", c.diffusion.n_classes);
        read(d, "sample_steps", c.diffusion.sample_steps);
        read(d, "sampler", c.diffusion.sampler);
    }
    if (j.contains("metrics")) {
        const json& m = j.at("metrics");
        expect_keys(m, "metrics", {"iou_queries", "cd_points", "f1_tau", "set_points"});
        read(m, "iou_queries", c.metrics.iou_queries);
        read(m, "cd_points", c.metrics.cd_points);
        read(m, "f1_tau", c.metrics.f1_tau);
        read(m, "set_points", c.metrics.set_points);
    }
    validate(c);
    return c;
}

Config load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("malformed config " + path + ": " + e.what());
    }
    return from_json(j);
}

void validate(const Config& c) {
    model::validate(model_config(c));  // throws ConfigError on violations
    if (c.geometry.near_sigma <= 0.0)
        throw ConfigError("geometry.near_sigma must be > 0, got " +
                          std::to_string(c.geometry.near_sigma));
    if (c.fields.grid_resolution < 2)
        throw ConfigError("fields.grid_resolution must be >= 2");
    if (c.fields.multires_coarse >= 2 &&
        c.fields.grid_resolution % c.fields.multires_coarse != 0)
        throw ConfigError("fields.grid_resolution (" + std::to_string(c.fields.grid_resolution) +
                          ") must be divisible by fields.multires_coarse (" +
                          std::to_string(c.fields.multires_coarse) + ")");
    if (!(c.fields.iso_threshold > 0.0 && c.fields.iso_threshold < 1.0))
        throw ConfigError("fields.iso_threshold must be in (0,1)");
    if (c.diffusion.sigma_min >= c.diffusion.sigma_max)
        throw ConfigError("diffusion.sigma_min (" + std::to_string(c.diffusion.sigma_min) +
                          ") must be < diffusion.sigma_max (" + std::to_string(c.diffusion.sigma_max) +
                          ")");
    if (c.diffusion.rho <= 0.0) throw ConfigError("diffusion.rho must be > 0");
    if (c.diffusion.sampler != "heun" && c.diffusion.sampler != "euler")
        throw ConfigError("diffusion.sampler must be 'heun' or 'euler'");
    if (c.diffusion.width % c.diffusion.n_heads != 0)
        throw ConfigError("diffusion.width (" + std::to_string(c.diffusion.width) +
                          ") must be divisible by diffusion.n_heads (" +
                          std::to_string(c.diffusion.n_heads) + ")");
}

model::ModelConfig model_config(const Config& c) {
    model::ModelConfig mc;
    mc.encoder = c.encoder;
    mc.decoder = c.decoder;
    mc.decoder.width = c.encoder.width;
    mc.decoder.latent_dim = c.encoder.latent_dim;
    mc.decoder.n_heads = c.encoder.n_heads;
    mc.fields.triplane_channels = c.decoder.triplane_channels;
    mc.fields.mlp_hidden = c.fields.mlp_hidden;
    mc.init_seed = c.seed;
    return mc;
}

Config paper_scale_config() {
    Config c;
    c.encoder.n_points = 2048;
    c.encoder.n_patches = 512;
    c.encoder.n_latents = 64;
    c.encoder.width = 512;
    c.encoder.latent_dim = 32;
    c.encoder.n_blocks = 4;
    c.encoder.n_heads = 8;
    c.decoder.resolution = 128;
    c.decoder.patch_size = 8;
    c.decoder.n_layers = 12;
    c.decoder.keep_ratio = 0.25;
    c.diffusion.n_layers = 24;
    c.diffusion.width = 512;
    return c;
}

}  // namespace shapecodec::config
