// Command-line entry points: dataset generation, two-stage VAE training,
// diffusion training, reconstruction, generation, evaluation, and export.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "shapecodec/config.hpp"
#include "shapecodec/diffusion.hpp"
#include "shapecodec/errors.hpp"
#include "shapecodec/metrics.hpp"
#include "shapecodec/training.hpp"

namespace fs = std::filesystem;
using namespace shapecodec;

namespace {

std::string default_out_root() {
    const char* env = std::getenv("SHAPECODEC_OUT_ROOT");
    return env && env[0] ? std::string(env) : std::string("out");
}

config::Config load_config_or_default(const std::string& path) {
    if (path.empty()) {
        config::Config c;
        config::validate(c);
        return c;
    }
    return config::load_file(path);
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, const std::string& default_leaf) {
    cmd->add_option("--config", o.config_path, "JSON config file (defaults built in)");
    cmd->add_option("--out", o.out_dir, "output directory")
        ->default_val(default_out_root() + "/" + default_leaf);
    cmd->add_option("--seed", o.seed, "override config.seed")->each([&o](const std::string&) {
        o.seed_set = true;
    });
}

config::Config resolve_config(const CommonOpts& o) {
    config::Config c = load_config_or_default(o.config_path);
    if (o.seed_set) c.seed = o.seed;
    return c;
}

data::Dataset load_dataset(const std::string& dir) {
    return data::Dataset::load((fs::path(dir) / "manifest.json").string());
}

geometry::Points cloud_for_entry(const config::Config& cfg, const data::Dataset& ds, int index,
                                 std::uint64_t salt) {
    if (index < 0 || index >= static_cast<int>(ds.entries.size()))
        throw DataError("shape id " + std::to_string(index) + " not found (dataset has " +
                        std::to_string(ds.entries.size()) + " entries)");
    return geometry::sample_surface_points(ds.entries[static_cast<size_t>(index)].shape,
                                           cfg.encoder.n_points, mix_seed(cfg.seed, salt,
                                                                          static_cast<std::uint64_t>(index)));
}

int cmd_dataset(const CommonOpts& o, int count_override, bool force) {
    config::Config cfg = resolve_config(o);
    int count = count_override > 0 ? count_override : cfg.geometry.dataset_count;

    fs::path dir(o.out_dir);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw ConfigError("output directory " + dir.string() +
                          " is not empty; pass --force to overwrite");
    fs::create_directories(dir);

    data::Dataset ds = data::Dataset::procedural(count, cfg.seed);
    ds.save((dir / "manifest.json").string());
    std::printf("dataset: %d shapes -> %s\n", count, (dir / "manifest.json").c_str());
    return 0;
}

int cmd_train(const CommonOpts& o, const std::string& stage, const std::string& dataset_dir,
              const std::string& from_ckpt, const std::string& resume_ckpt,
              long long steps_override) {
    config::Config cfg = resolve_config(o);
    if (stage != "ae" && stage != "vae" && stage != "diffusion")
        throw ConfigError("--stage must be ae, vae, or diffusion");
    if (dataset_dir.empty()) throw ConfigError("--dataset is required for training");
    data::Dataset ds = load_dataset(dataset_dir);

    if (steps_override >= 0) {
        if (stage == "ae") cfg.training.steps_ae = steps_override;
        else if (stage == "vae") cfg.training.steps_vae = steps_override;
        else cfg.training.steps_diffusion = steps_override;
    }
    fs::create_directories(o.out_dir);

    if (stage == "diffusion") {
        if (from_ckpt.empty())
            throw ConfigError("training stage 'diffusion' requires --from <vae checkpoint>; run "
                              "`shapecodec train --stage vae` first");
        io::Checkpoint vae_ckpt = io::load_checkpoint(from_ckpt);
        if (vae_ckpt.stage != "vae" && vae_ckpt.stage != "ae")
            throw ConfigError("--from checkpoint has stage '" + vae_ckpt.stage +
                              "'; expected a vae checkpoint");
        auto vae = training::load_autoencoder(vae_ckpt);
        config::Config vae_cfg = config::from_json(vae_ckpt.config);
        // model geometry comes from the VAE; diffusion knobs from this config
        vae_cfg.diffusion = cfg.diffusion;
        vae_cfg.training = cfg.training;
        vae_cfg.seed = cfg.seed;
        diffusion::DiffusionTrainer trainer(vae_cfg, *vae, vae_ckpt.content_hash, ds, o.out_dir);
        if (!resume_ckpt.empty()) trainer.restore(io::load_checkpoint(resume_ckpt));
        std::string path = trainer.train();
        std::printf("diffusion checkpoint: %s\n", path.c_str());
        return 0;
    }

    std::unique_ptr<model::Autoencoder> m;
    if (stage == "vae") {
        if (from_ckpt.empty())
            throw ConfigError("training stage 'vae' requires --from <ae checkpoint>; run "
                              "`shapecodec train --stage ae` first");
        io::Checkpoint ae_ckpt = io::load_checkpoint(from_ckpt);
        if (ae_ckpt.stage != "ae")
            throw ConfigError("--from checkpoint has stage '" + ae_ckpt.stage +
                              "'; expected an ae checkpoint");
        config::Config ae_cfg = config::from_json(ae_ckpt.config);
        ae_cfg.training = cfg.training;
        ae_cfg.seed = cfg.seed;
        cfg = ae_cfg;
        m = std::make_unique<model::Autoencoder>(config::model_config(cfg));
        training::restore_model_params(*m, ae_ckpt);
    } else {
        m = std::make_unique<model::Autoencoder>(config::model_config(cfg));
    }

    training::Trainer trainer(*m, cfg, ds, o.out_dir);
    if (!resume_ckpt.empty()) {
        io::Checkpoint ckpt = io::load_checkpoint(resume_ckpt);
        if (ckpt.stage != stage)
            throw ConfigError("--resume checkpoint stage '" + ckpt.stage + "' does not match --stage " +
                              stage);
        trainer.restore(ckpt);
    }
    std::string path = trainer.train(stage);
    std::printf("%s checkpoint: %s\n", stage.c_str(), path.c_str());
    return 0;
}

fields::OccupancyField field_from_model(const model::Autoencoder& m, const geometry::Points& cloud,
                                        std::uint64_t seed, bool through_vae) {
    return m.reconstruct_field(cloud, seed, through_vae);
}

int cmd_reconstruct(const CommonOpts& o, const std::string& ckpt_path,
                    const std::string& dataset_dir, int shape_id, const std::string& input_mesh,
                    int grid_r, bool multires) {
    io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
    auto m = training::load_autoencoder(ckpt);
    config::Config cfg = config::from_json(ckpt.config);
    bool through_vae = ckpt.stage == "vae";
    if (grid_r <= 0) grid_r = cfg.fields.grid_resolution;
    fs::create_directories(o.out_dir);

    geometry::Points cloud;
    const geometry::ProceduralShape* oracle_shape = nullptr;
    data::Dataset ds;
    if (!input_mesh.empty()) {
        mesh::Mesh in = mesh::normalize_to_unit_cube(mesh::load_obj(input_mesh), 0.05);
        cloud = mesh::sample_mesh_surface(in, cfg.encoder.n_points, mix_seed(cfg.seed, 0xC10));
    } else {
        if (dataset_dir.empty())
            throw ConfigError("reconstruct needs either --input mesh.obj or --dataset + --shape");
        ds = load_dataset(dataset_dir);
        cloud = cloud_for_entry(cfg, ds, shape_id, 0xC11);
        oracle_shape = &ds.entries[static_cast<size_t>(shape_id)].shape;
    }

    fields::OccupancyField f = field_from_model(*m, cloud, mix_seed(cfg.seed, 0xC12), through_vae);
    fields::OccupancyGrid grid =
        multires ? fields::multires_grid_eval(f, grid_r / 2, grid_r, cfg.fields.multires_dilation,
                                              cfg.fields.chunk, cfg.fields.iso_threshold)
                 : fields::dense_grid_eval(f, grid_r, cfg.fields.chunk);
    mesh::Mesh out_mesh = fields::extract_mesh(grid, cfg.fields.iso_threshold);
    std::string mesh_path = (fs::path(o.out_dir) / "reconstruction.obj").string();
    mesh::save_obj(out_mesh, mesh_path);
    std::printf("mesh: %s (%zu vertices, %zu faces)\n", mesh_path.c_str(), out_mesh.vertices.size(),
                out_mesh.faces.size());

    if (oracle_shape) {
        const auto& shape = *oracle_shape;
        double iou = metrics::iou_volumetric(
            metrics::batch_indicator([&f](const geometry::Vec3& p) {
                geometry::Points q(1, 3);
                q.row(0) = p;
                return fields::query_occupancy_logits(f, q)(0) > 0.0;
            }),
            metrics::batch_indicator([&shape](const geometry::Vec3& p) { return shape.contains(p); }),
            cfg.metrics.iou_queries, mix_seed(cfg.seed, 0xC13));
        geometry::Points ref_pts =
            geometry::sample_surface_points(shape, cfg.metrics.cd_points, mix_seed(cfg.seed, 0xC14));
        geometry::Points rec_pts =
            mesh::sample_mesh_surface(out_mesh, cfg.metrics.cd_points, mix_seed(cfg.seed, 0xC15));
        double cd = metrics::chamfer_distance(rec_pts, ref_pts);
        double f1 = metrics::f_score(rec_pts, ref_pts, cfg.metrics.f1_tau);
        std::printf("IoU %.2f%%  CD %.5f (L2 sum-of-means)  F1 %.2f%% (tau=%.3g)\n", iou, cd, f1,
                    cfg.metrics.f1_tau);
        nlohmann::json report = {{"iou", iou}, {"cd", cd}, {"f1", f1}, {"shape", shape_id}};
        std::ofstream(fs::path(o.out_dir) / "metrics.json") << report.dump(2) << '\n';
    }
    return 0;
}

int cmd_generate(const CommonOpts& o, const std::string& diff_ckpt_path,
                 const std::string& vae_ckpt_path, int n, int steps, int class_id,
                 int grid_r, bool multires, bool force) {
    io::Checkpoint dckpt = io::load_checkpoint(diff_ckpt_path);
    diffusion::LoadedDenoiser ld = diffusion::load_denoiser(dckpt);

    io::Checkpoint vckpt = io::load_checkpoint(vae_ckpt_path);
    if (ld.vae_hash != vckpt.content_hash) {
        std::string msg = "VAE checkpoint hash " + vckpt.content_hash +
                          " does not match the hash the diffusion model was trained against (" +
                          ld.vae_hash + ")";
        if (!force) throw ConfigError(msg + "; pass --force to proceed anyway");
        std::fprintf(stderr, "warning: %s\n", msg.c_str());
    }
    auto vae = training::load_autoencoder(vckpt);
    config::Config cfg = config::from_json(vckpt.config);
    if (grid_r <= 0) grid_r = cfg.fields.grid_resolution;
    if (steps <= 0) steps = config::from_json(dckpt.config).diffusion.sample_steps;
    fs::create_directories(o.out_dir);

    diffusion::GenerateTimings timings;
    std::uint64_t seed = o.seed_set ? o.seed : cfg.seed;
    auto samples = diffusion::generate(*ld.denoiser, ld.stats, *vae, n, steps, class_id, seed,
                                       grid_r, multires, &timings);
    for (size_t i = 0; i < samples.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%03zu.obj", i);
        mesh::save_obj(samples[i].mesh, (fs::path(o.out_dir) / name).string());
    }
    double n_d = static_cast<double>(n);
    std::printf("sampling   %.3f s (%.2f sample/s)\n", timings.sampling_s, n_d / timings.sampling_s);
    std::printf("decoding   %.3f s (%.2f sample/s)\n", timings.decoding_s, n_d / timings.decoding_s);
    std::printf("full       %.3f s (%.2f sample/s)\n", timings.full_s, n_d / timings.full_s);
    nlohmann::json report = {{"n", n},
                             {"steps", steps},
                             {"sampling_s", timings.sampling_s},
                             {"decoding_s", timings.decoding_s},
                             {"full_s", timings.full_s}};
    std::ofstream(fs::path(o.out_dir) / "timings.json") << report.dump(2) << '\n';
    return 0;
}

int cmd_evaluate(const CommonOpts& o, const std::string& gen_dir, const std::string& ref_dir,
                 int n_points) {
    config::Config cfg = resolve_config(o);
    if (n_points <= 0) n_points = cfg.metrics.set_points;

    auto load_dir = [n_points, &cfg](const std::string& dir, std::uint64_t salt) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".obj") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no .obj meshes in " + dir);
        std::vector<geometry::Points> sets;
        for (size_t i = 0; i < files.size(); ++i)
            sets.push_back(mesh::sample_mesh_surface(mesh::load_obj(files[i]), n_points,
                                                     mix_seed(cfg.seed, salt, i)));
        return sets;
    };
    std::vector<geometry::Points> gen = load_dir(gen_dir, 0xE1);
    std::vector<geometry::Points> ref = load_dir(ref_dir, 0xE2);

    metrics::SetMetrics sm = metrics::set_metrics(gen, ref);
    std::printf("%-12s %-10s %-10s %-10s\n", "metric", "MMD", "COV(%)", "1-NNA(%)");
    std::printf("%-12s %-10.5f %-10.2f %-10.2f\n", "CD", sm.mmd, sm.cov_percent, sm.nna_percent);

    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        nlohmann::json report = {{"mmd_cd", sm.mmd},
                                 {"cov_percent", sm.cov_percent},
                                 {"nna_percent", sm.nna_percent},
                                 {"n_points", n_points},
                                 {"gen", gen_dir},
                                 {"ref", ref_dir},
                                 {"cd_convention", "two-sided sum of mean NN L2 distances"}};
        std::ofstream(fs::path(o.out_dir) / "set_metrics.json") << report.dump(2) << '\n';
    }
    return 0;
}

int cmd_export(const CommonOpts& o, const std::string& ckpt_path, const std::string& dataset_dir,
               int shape_id, const std::string& input_mesh, int grid_r) {
    io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
    auto m = training::load_autoencoder(ckpt);
    config::Config cfg = config::from_json(ckpt.config);
    if (grid_r <= 0) grid_r = cfg.fields.grid_resolution;
    fs::create_directories(o.out_dir);

    geometry::Points cloud;
    if (!input_mesh.empty()) {
        mesh::Mesh in = mesh::normalize_to_unit_cube(mesh::load_obj(input_mesh), 0.05);
        cloud = mesh::sample_mesh_surface(in, cfg.encoder.n_points, mix_seed(cfg.seed, 0xEE0));
    } else {
        if (dataset_dir.empty())
            throw ConfigError("export needs either --input mesh.obj or --dataset + --shape");
        data::Dataset ds = load_dataset(dataset_dir);
        cloud = cloud_for_entry(cfg, ds, shape_id, 0xEE1);
    }

    fields::OccupancyField f = field_from_model(*m, cloud, mix_seed(cfg.seed, 0xEE2),
                                                ckpt.stage == "vae");
    io::export_triplane(f.triplane, (fs::path(o.out_dir) / "triplane").string());
    fields::OccupancyGrid grid = fields::dense_grid_eval(f, grid_r, cfg.fields.chunk);
    io::export_grid(grid, (fs::path(o.out_dir) / "grid").string());
    mesh::Mesh out_mesh = fields::extract_mesh(grid, cfg.fields.iso_threshold);
    mesh::save_obj(out_mesh, (fs::path(o.out_dir) / "mesh.obj").string());
    std::printf("exported triplane.raw/json, grid.raw/json, mesh.obj -> %s\n", o.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compact 1D-latent 3D shape autoencoder with triplane decoding and EDM latent diffusion"};
    app.require_subcommand(1);

    CommonOpts o_dataset, o_train, o_recon, o_gen, o_eval, o_export;

    auto* c_dataset = app.add_subcommand("dataset", "generate a procedural shape dataset");
    add_common(c_dataset, o_dataset, "dataset");
    int ds_count = 0;
    bool ds_force = false;
    c_dataset->add_option("--count", ds_count, "number of shapes (default from config)");
    c_dataset->add_flag("--force", ds_force, "overwrite a non-empty output directory");

    auto* c_train = app.add_subcommand("train", "train a stage: ae, vae, or diffusion");
    add_common(c_train, o_train, "train");
    std::string tr_stage, tr_dataset, tr_from, tr_resume;
    long long tr_steps = -1;
    c_train->add_option("--stage", tr_stage, "ae | vae | diffusion")->required();
    c_train->add_option("--dataset", tr_dataset, "dataset directory (with manifest.json)")->required();
    c_train->add_option("--from", tr_from, "upstream checkpoint (ae for vae, vae for diffusion)");
    c_train->add_option("--resume", tr_resume, "resume from a same-stage checkpoint");
    c_train->add_option("--steps", tr_steps, "override the step budget");

    auto* c_recon = app.add_subcommand("reconstruct", "encode and decode one shape to a mesh");
    add_common(c_recon, o_recon, "reconstruct");
    std::string re_ckpt, re_dataset, re_input;
    int re_shape = 0, re_grid = 0;
    bool re_multires = false;
    c_recon->add_option("--checkpoint", re_ckpt, "ae or vae checkpoint")->required();
    c_recon->add_option("--dataset", re_dataset, "dataset directory");
    c_recon->add_option("--shape", re_shape, "dataset shape id");
    c_recon->add_option("--input", re_input, "OBJ mesh input (instead of --shape)");
    c_recon->add_option("--grid", re_grid, "test grid resolution (default from config: 128)");
    c_recon->add_flag("--multires", re_multires, "coarse-to-fine grid evaluation (64 -> 128)");

    auto* c_gen = app.add_subcommand("generate", "sample latents and decode meshes");
    add_common(c_gen, o_gen, "generate");
    std::string ge_ckpt, ge_vae;
    int ge_n = 8, ge_steps = 0, ge_class = -1, ge_grid = 0;
    bool ge_multires = false, ge_force = false;
    c_gen->add_option("--checkpoint", ge_ckpt, "diffusion checkpoint")->required();
    c_gen->add_option("--vae", ge_vae, "vae checkpoint to decode with")->required();
    c_gen->add_option("--n", ge_n, "number of samples");
    c_gen->add_option("--steps", ge_steps, "sampling steps (default from config: 18)");
    c_gen->add_option("--class", ge_class, "class id (-1 cycles when conditional)");
    c_gen->add_option("--grid", ge_grid, "test grid resolution");
    c_gen->add_flag("--multires", ge_multires, "coarse-to-fine grid evaluation");
    c_gen->add_flag("--force", ge_force, "ignore a VAE hash mismatch");

    auto* c_eval = app.add_subcommand("evaluate", "set metrics between two mesh directories");
    add_common(c_eval, o_eval, "evaluate");
    std::string ev_gen, ev_ref;
    int ev_points = 0;
    c_eval->add_option("--gen", ev_gen, "generated mesh directory")->required();
    c_eval->add_option("--ref", ev_ref, "reference mesh directory")->required();
    c_eval->add_option("--points", ev_points, "surface points per shape (default 2048)");

    auto* c_export = app.add_subcommand("export", "export triplane, grid, and mesh artifacts");
    add_common(c_export, o_export, "export");
    std::string ex_ckpt, ex_dataset, ex_input;
    int ex_shape = 0, ex_grid = 0;
    c_export->add_option("--checkpoint", ex_ckpt, "ae or vae checkpoint")->required();
    c_export->add_option("--dataset", ex_dataset, "dataset directory");
    c_export->add_option("--shape", ex_shape, "dataset shape id");
    c_export->add_option("--input", ex_input, "OBJ mesh input");
    c_export->add_option("--grid", ex_grid, "grid resolution");

    try {
        app.parse(argc, argv);
        if (*c_dataset) return cmd_dataset(o_dataset, ds_count, ds_force);
        if (*c_train)
            return cmd_train(o_train, tr_stage, tr_dataset, tr_from, tr_resume, tr_steps);
        if (*c_recon)
            return cmd_reconstruct(o_recon, re_ckpt, re_dataset, re_shape, re_input, re_grid,
                                   re_multires);
        if (*c_gen)
            return cmd_generate(o_gen, ge_ckpt, ge_vae, ge_n, ge_steps, ge_class, ge_grid,
                                ge_multires, ge_force);
        if (*c_eval) return cmd_evaluate(o_eval, ev_gen, ev_ref, ev_points);
        if (*c_export)
            return cmd_export(o_export, ex_ckpt, ex_dataset, ex_shape, ex_input, ex_grid);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
