#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "shapecodec/errors.hpp"
#include "shapecodec/training.hpp"
#include "test_util.hpp"

using namespace shapecodec;
using ad::Mat;
using ad::Tensor;

namespace {

config::Config tiny_config() {
    config::Config c;
    c.seed = 3;
    c.encoder.n_points = 96;
    c.encoder.n_patches = 16;
    c.encoder.n_latents = 8;
    c.encoder.width = 32;
    c.encoder.latent_dim = 8;
    c.encoder.n_blocks = 1;
    c.encoder.n_heads = 4;
    c.decoder.resolution = 16;
    c.decoder.patch_size = 4;
    c.decoder.triplane_channels = 6;
    c.decoder.n_layers = 1;
    c.decoder.n_latent_layers = 1;
    c.decoder.keep_ratio = 0.25;
    c.fields.mlp_hidden = 16;
    c.geometry.n_vol = 128;
    c.geometry.n_near = 128;
    c.training.log_interval = 0;
    return c;
}

data::Dataset sphere_dataset(int n = 1) {
    data::Dataset ds;
    ds.seed = 1;
    for (int i = 0; i < n; ++i) {
        data::DatasetEntry e;
        e.seed = static_cast<std::uint64_t>(i);
        e.shape.kind = geometry::ShapeKind::Sphere;
        e.shape.radius = 0.4 + 0.02 * i;
        ds.entries.push_back(e);
    }
    return ds;
}

}  // namespace

TEST_CASE("recon_loss analytic values") {
    // perfect predictions
    Eigen::VectorXd labels(4);
    labels << 1, 0, 1, 0;
    Mat strong(4, 1);
    strong << 20, -20, 20, -20;
    CHECK(training::recon_loss(Tensor::constant(strong), labels, 2, 0.1).scalar() < 1e-8);

    // logit 0 everywhere: ln2 * (1 + near_weight)
    Mat zeros = Mat::Zero(4, 1);
    double got = training::recon_loss(Tensor::constant(zeros), labels, 2, 0.1).scalar();
    CHECK(got == doctest::Approx(std::log(2.0) * 1.1).epsilon(1e-9));

    config::Config c;
    CHECK(c.training.near_weight == 0.1);
    CHECK(c.training.lambda_unc == 0.01);
    CHECK(c.training.lambda_kl == 0.001);
}

TEST_CASE("per_query_bce clipping") {
    Eigen::VectorXd logits(3), labels(3);
    logits << 20.0, 0.0, 15.0;
    labels << 0.0, 1.0, 1.0;
    Eigen::VectorXd t = training::per_query_bce(logits, labels);
    CHECK(t(0) == 1.0);  // raw value ~20, clipped
    CHECK(t(1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(t(2) < 1e-6);
    CHECK(t.minCoeff() >= 0.0);
    CHECK(t.maxCoeff() <= 1.0);
}

TEST_CASE("uncertainty_loss values") {
    Eigen::VectorXd targets(2);
    targets << 0.6931, 0.6931;
    Mat u = Mat::Constant(2, 1, 0.125);
    double got = training::uncertainty_loss(Tensor::constant(u), targets).scalar();
    CHECK(got == doctest::Approx(0.5681 * 0.5681).epsilon(1e-3));

    Mat exact(2, 1);
    exact << 0.6931, 0.6931;
    CHECK(training::uncertainty_loss(Tensor::constant(exact), targets).scalar() == 0.0);
}

TEST_CASE("kl_loss values and nonnegativity") {
    Mat zeros = Mat::Zero(3, 4);
    CHECK(training::kl_loss(Tensor::constant(zeros), Tensor::constant(zeros)).scalar() == 0.0);

    Mat ones = Mat::Ones(3, 4);
    CHECK(training::kl_loss(Tensor::constant(ones), Tensor::constant(zeros)).scalar() ==
          doctest::Approx(0.5).epsilon(1e-9));

    RandomStream rng(4);
    for (int i = 0; i < 20; ++i) {
        Mat mu = testutil::random_matrix(3, 4, rng);
        Mat lv = testutil::random_matrix(3, 4, rng);
        CHECK(training::kl_loss(Tensor::constant(mu), Tensor::constant(lv)).scalar() >= 0.0);
    }
}

TEST_CASE("uncertainty loss reaches the head but not the occupancy mlp") {
    config::Config c = tiny_config();
    model::Autoencoder m(config::model_config(c));
    data::Dataset ds = sphere_dataset();
    training::Trainer trainer(m, c, ds, "");
    auto batch = trainer.make_batch("ae", 1);

    m.params.zero_grads();
    Tensor compact = m.enc->encode(Tensor::constant(batch.cloud), batch.anchors);
    decoder::Decoder::Forward fw = m.dec->decode(compact);
    Tensor logits_init = m.field->query_logits(fw.triplanes.base, c.decoder.resolution,
                                               batch.queries.points);
    Eigen::VectorXd targets = training::per_query_bce(logits_init.value().col(0),
                                                      batch.queries.labels);
    Tensor u = fields::FieldsNet::uncertainty(fw.unc_logits, c.decoder.tokens_per_side(),
                                              batch.queries.points);
    Tensor unc_only = training::uncertainty_loss(u, targets);
    ad::backward(unc_only);

    // head gets gradient
    CHECK(m.params.get("dec.unc.fc2.w").has_grad());
    CHECK(m.params.get("dec.unc.fc2.w").grad().cwiseAbs().maxCoeff() > 0.0);
    // occupancy mlp does not (targets are detached, u bypasses the mlp)
    for (const char* name : {"fields.fc1.w", "fields.fc2.w", "fields.fc3.w"}) {
        Tensor t = m.params.get(name);
        bool zero = !t.has_grad() || t.grad().cwiseAbs().maxCoeff() == 0.0;
        CHECK(zero);
    }
}

TEST_CASE("stage-1 loss decreases on a single-sphere overfit") {
    config::Config c = tiny_config();
    c.encoder.n_latents = 16;
    c.encoder.n_patches = 24;
    c.decoder.resolution = 32;
    c.decoder.patch_size = 8;
    c.geometry.n_vol = 512;
    c.geometry.n_near = 512;
    c.training.lr = 1e-3;
    model::Autoencoder m(config::model_config(c));
    data::Dataset ds = sphere_dataset();
    training::Trainer trainer(m, c, ds, "");

    std::vector<double> losses;
    for (long long s = 1; s <= 200; ++s) losses.push_back(trainer.step("ae", s).total);

    // disjoint 20-step window means, strictly decreasing
    std::vector<double> windows;
    for (size_t w = 0; w + 20 <= losses.size(); w += 20) {
        double acc = 0.0;
        for (size_t i = w; i < w + 20; ++i) acc += losses[i];
        windows.push_back(acc / 20.0);
    }
    REQUIRE(windows.size() == 10);
    for (size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] < windows[i - 1]);
}

TEST_CASE("stage-2 freezes the autoencoder bitwise and reduces feature-matching error") {
    config::Config c = tiny_config();
    c.training.lr = 1e-3;
    model::Autoencoder m(config::model_config(c));
    data::Dataset ds = sphere_dataset();
    training::Trainer trainer(m, c, ds, "");
    for (long long s = 1; s <= 20; ++s) trainer.step("ae", s);  // give the encoder some structure

    std::map<std::string, Mat> frozen_before;
    for (const auto& [name, t] : m.params.all())
        if (name.rfind("kl.", 0) != 0 && name.rfind("latdec.", 0) != 0)
            frozen_before.emplace(name, t.value());

    std::vector<double> fm;
    for (long long s = 1; s <= 60; ++s) fm.push_back(trainer.step("vae", s).fm);

    for (const auto& [name, before] : frozen_before) {
        const Mat& after = m.params.get(name).value();
        CHECK(std::memcmp(before.data(), after.data(),
                          sizeof(double) * static_cast<size_t>(before.size())) == 0);
    }

    double first = 0, last = 0;
    for (int i = 0; i < 20; ++i) first += fm[static_cast<size_t>(i)];
    for (int i = 40; i < 60; ++i) last += fm[static_cast<size_t>(i)];
    CHECK(last < first);
}

TEST_CASE("resume reproduces the loss trajectory") {
    config::Config c = tiny_config();
    data::Dataset ds = sphere_dataset(2);
    std::string dir = "resume_test_out";

    model::Autoencoder m1(config::model_config(c));
    training::Trainer t1(m1, c, ds, dir);
    for (long long s = 1; s <= 6; ++s) t1.step("ae", s);
    t1.save_checkpoint_file("ae", 6, dir + "/mid.ckpt");
    std::vector<double> cont;
    for (long long s = 7; s <= 10; ++s) cont.push_back(t1.step("ae", s).total);

    model::Autoencoder m2(config::model_config(c));
    training::Trainer t2(m2, c, ds, "");
    t2.restore(io::load_checkpoint(dir + "/mid.ckpt"));
    CHECK(t2.completed_steps() == 6);
    std::vector<double> resumed;
    for (long long s = 7; s <= 10; ++s) resumed.push_back(t2.step("ae", s).total);

    for (size_t i = 0; i < cont.size(); ++i)
        CHECK(std::abs(cont[i] - resumed[i]) < 1e-5);
    std::filesystem::remove_all(dir);
}

TEST_CASE("zero-step training emits the initialized checkpoint unchanged") {
    config::Config c = tiny_config();
    c.training.steps_ae = 0;
    data::Dataset ds = sphere_dataset();
    std::string dir = "zero_step_out";

    model::Autoencoder m(config::model_config(c));
    std::map<std::string, Mat> init;
    for (const auto& [name, t] : m.params.all()) init.emplace(name, t.value());

    training::Trainer trainer(m, c, ds, dir);
    std::string path = trainer.train("ae");
    io::Checkpoint ckpt = io::load_checkpoint(path);
    CHECK(ckpt.step == 0);
    for (const auto& [name, before] : init) {
        const Mat& saved = ckpt.arrays.at(name);
        CHECK(std::memcmp(before.data(), saved.data(),
                          sizeof(double) * static_cast<size_t>(before.size())) == 0);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    config::Config c = tiny_config();
    data::Dataset ds = sphere_dataset();
    std::string dir = "nan_test_out";
    model::Autoencoder m(config::model_config(c));
    training::Trainer trainer(m, c, ds, dir);

    Tensor w = m.params.get("enc.embed.out.w");
    w.value_mut()(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(trainer.step("ae", 1), NumericError);
    CHECK(std::filesystem::exists(dir + "/nan_dump.json"));
    std::filesystem::remove_all(dir);
}
