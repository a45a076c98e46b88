// Exercises the installed binary end to end through std::system: exit codes,
// determinism, and stage-dependency refusals. The binary path comes from the
// SHAPECODEC_BIN compile definition.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kBin = SHAPECODEC_BIN;

int run(const std::string& args, const std::string& log = "/dev/null") {
    std::string cmd = kBin + " " + args + " >" + log + " 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

void write_small_config(const std::string& path, int steps_ae = 5) {
    std::ofstream out(path);
    out << R"({
  "seed": 7,
  "encoder": {"n_points": 64, "n_patches": 12, "n_latents": 6, "width": 32, "latent_dim": 8, "n_blocks": 1, "n_heads": 4},
  "decoder": {"resolution": 16, "patch_size": 4, "triplane_channels": 4, "n_layers": 1, "n_latent_layers": 1},
  "fields": {"mlp_hidden": 8, "grid_resolution": 16, "multires_coarse": 8},
  "geometry": {"n_vol": 64, "n_near": 64},
  "training": {"steps_ae": )" << steps_ae
        << R"(, "steps_vae": 5, "steps_diffusion": 8, "log_interval": 2},
  "diffusion": {"n_layers": 1, "width": 32, "n_heads": 4}
})";
}

}  // namespace

TEST_CASE("dataset generation: determinism, --count, --force refusal") {
    TempDir tmp("sc_cli_dataset");
    CHECK(run("dataset --out " + tmp / "d1" + " --count 8 --seed 3") == 0);
    CHECK(run("dataset --out " + tmp / "d2" + " --count 8 --seed 3") == 0);
    CHECK(slurp(tmp / "d1/manifest.json") == slurp(tmp / "d2/manifest.json"));

    // --count respected
    std::string manifest = slurp(tmp / "d1/manifest.json");
    CHECK(manifest.find("\"count\": 8") != std::string::npos);

    // refusing to clobber without --force is a configuration error (2)
    CHECK(run("dataset --out " + tmp / "d1" + " --count 8 --seed 3") == 2);
    CHECK(run("dataset --out " + tmp / "d1" + " --count 8 --seed 3 --force") == 0);
}

TEST_CASE("training pipeline: stage ordering is enforced") {
    TempDir tmp("sc_cli_train");
    write_small_config(tmp / "cfg.json");
    REQUIRE(run("dataset --out " + tmp / "ds" + " --count 2 --seed 1") == 0);

    // vae before ae: configuration error with remediation hint
    std::string log = tmp / "err.txt";
    CHECK(run("train --stage vae --dataset " + tmp / "ds" + " --config " + tmp / "cfg.json" +
              " --out " + tmp / "run", log) == 2);
    CHECK(slurp(log).find("--from") != std::string::npos);

    CHECK(run("train --stage ae --dataset " + tmp / "ds" + " --config " + tmp / "cfg.json" +
              " --out " + tmp / "run") == 0);
    CHECK(run("train --stage vae --dataset " + tmp / "ds" + " --config " + tmp / "cfg.json" +
              " --from " + tmp / "run/ckpt_ae_final.ckpt" + " --out " + tmp / "run") == 0);
    CHECK(run("train --stage diffusion --dataset " + tmp / "ds" + " --config " + tmp / "cfg.json" +
              " --from " + tmp / "run/ckpt_vae_final.ckpt" + " --out " + tmp / "run") == 0);

    // checkpoints carry their stage tags
    CHECK(slurp(tmp / "run/ckpt_ae_final.ckpt").find("\"stage\":\"ae\"") != std::string::npos);
    CHECK(slurp(tmp / "run/ckpt_vae_final.ckpt").find("\"stage\":\"vae\"") != std::string::npos);
    CHECK(slurp(tmp / "run/ckpt_diffusion_final.ckpt").find("\"stage\":\"diffusion\"") !=
          std::string::npos);

    // wrong-stage --from is rejected
    CHECK(run("train --stage vae --dataset " + tmp / "ds" + " --config " + tmp / "cfg.json" +
              " --from " + tmp / "run/ckpt_vae_final.ckpt" + " --out " + tmp / "run2") == 2);

    // reconstruction against a missing shape id is a data error (3)
    CHECK(run("reconstruct --checkpoint " + tmp / "run/ckpt_vae_final.ckpt" + " --dataset " +
              tmp / "ds" + " --shape 99 --out " + tmp / "rec") == 3);

    // generate with a mismatched VAE checkpoint refuses without --force
    CHECK(run("train --stage ae --dataset " + tmp / "ds" + " --config " + tmp / "cfg.json" +
              " --seed 99 --out " + tmp / "run_alt") == 0);
    CHECK(run("train --stage vae --dataset " + tmp / "ds" + " --config " + tmp / "cfg.json" +
              " --seed 99 --from " + tmp / "run_alt/ckpt_ae_final.ckpt" + " --out " +
              tmp / "run_alt") == 0);
    CHECK(run("generate --checkpoint " + tmp / "run/ckpt_diffusion_final.ckpt" + " --vae " +
              tmp / "run_alt/ckpt_vae_final.ckpt" + " --n 1 --grid 8 --out " + tmp / "gen") == 2);
    CHECK(run("generate --checkpoint " + tmp / "run/ckpt_diffusion_final.ckpt" + " --vae " +
              tmp / "run_alt/ckpt_vae_final.ckpt" + " --n 1 --grid 8 --force --out " +
              tmp / "gen") == 0);

    // resume continues and reports the same final step count
    CHECK(run("train --stage ae --dataset " + tmp / "ds" + " --config " + tmp / "cfg.json" +
              " --resume " + tmp / "run/ckpt_ae_final.ckpt" + " --steps 7 --out " +
              tmp / "run") == 0);
}

TEST_CASE("malformed inputs map to the documented exit codes") {
    TempDir tmp("sc_cli_errors");
    std::ofstream(tmp / "bad.json") << "{ not json";
    CHECK(run("dataset --out " + tmp / "d" + " --config " + tmp / "bad.json") == 2);

    std::ofstream(tmp / "unknown.json") << R"({"nonsense": 1})";
    CHECK(run("dataset --out " + tmp / "d" + " --config " + tmp / "unknown.json") == 2);

    CHECK(run("evaluate --gen " + tmp / "missing" + " --ref " + tmp / "missing") != 0);
    CHECK(run("bogus-subcommand") == 2);
}
