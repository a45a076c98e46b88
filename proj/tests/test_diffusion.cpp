#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "shapecodec/diffusion.hpp"
#include "test_util.hpp"

using namespace shapecodec;
using ad::Mat;
using ad::Tensor;
using diffusion::Denoiser;
using diffusion::DenoiserConfig;

namespace {

DenoiserConfig tiny_config(int m = 4, int d = 6) {
    DenoiserConfig cfg;
    cfg.n_latents = m;
    cfg.latent_dim = d;
    cfg.n_layers = 2;
    cfg.width = 32;
    cfg.n_heads = 4;
    return cfg;
}

}  // namespace

TEST_CASE("edm preconditioning closed forms") {
    const double sd = 0.73;
    RandomStream rng(1);
    for (int i = 0; i < 20; ++i) {
        double sigma = std::exp(rng.uniform(-4.0, 3.0));
        auto pc = diffusion::edm_preconditioning(sigma, sd);
        CHECK(pc.c_skip == doctest::Approx(sd * sd / (sigma * sigma + sd * sd)).epsilon(1e-12));
        CHECK(pc.c_out ==
              doctest::Approx(sigma * sd / std::sqrt(sigma * sigma + sd * sd)).epsilon(1e-12));
        CHECK(pc.c_in == doctest::Approx(1.0 / std::sqrt(sigma * sigma + sd * sd)).epsilon(1e-12));
        CHECK(pc.c_noise == doctest::Approx(0.25 * std::log(sigma)).epsilon(1e-12));
        // identity: c_out^2 * weight == c_skip + sigma^2-free residual form
        CHECK(diffusion::edm_loss_weight(sigma, sd) ==
              doctest::Approx((sigma * sigma + sd * sd) / (sigma * sigma * sd * sd)).epsilon(1e-12));
    }
    // c_skip at sigma == sigma_data is exactly 1/2
    CHECK(diffusion::edm_preconditioning(sd, sd).c_skip == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sigma ladder endpoints and ordering") {
    DenoiserConfig cfg = tiny_config();
    auto sig = diffusion::sigma_ladder(cfg, 18);
    REQUIRE(sig.size() == 19);
    CHECK(sig.front() == doctest::Approx(cfg.sigma_max).epsilon(1e-12));
    CHECK(sig[17] == doctest::Approx(cfg.sigma_min).epsilon(1e-9));
    CHECK(sig.back() == 0.0);
    for (size_t i = 1; i < sig.size(); ++i) CHECK(sig[i] < sig[i - 1]);

    auto one = diffusion::sigma_ladder(cfg, 1);
    CHECK(one.size() == 2);
    CHECK(one[0] == doctest::Approx(cfg.sigma_max));
}

TEST_CASE("denoiser shapes, sigma->0 limit, class handling") {
    nn::ParamStore ps;
    RandomStream rng(2);
    DenoiserConfig cfg = tiny_config();
    cfg.n_classes = 3;
    Denoiser dn(ps, cfg, rng);

    RandomStream drng(3);
    Mat z = testutil::random_matrix(cfg.n_latents, cfg.latent_dim, drng);
    Mat out = dn.denoise(z, 1.0, 0);
    CHECK(out.rows() == cfg.n_latents);
    CHECK(out.cols() == cfg.latent_dim);

    // sigma -> 0: c_skip ~ 1, c_out ~ sigma, output ~ z_noisy + O(sigma)
    Mat near = dn.denoise(z, 1e-6, 0);
    CHECK((near - z).cwiseAbs().maxCoeff() < 1e-4);

    CHECK_THROWS_AS(dn.denoise(z, 1.0, 7), std::invalid_argument);
    CHECK_THROWS_AS(dn.denoise(z, 0.0, 0), std::invalid_argument);

    nn::ParamStore ps2;
    RandomStream rng2(4);
    DenoiserConfig uncond = tiny_config();
    Denoiser dn2(ps2, uncond, rng2);
    CHECK_THROWS_AS(dn2.denoise(z, 1.0, 0), std::invalid_argument);
    CHECK(dn2.denoise(z, 1.0, -1).allFinite());
}

TEST_CASE("zero-initialized class embedding leaves outputs class-invariant") {
    nn::ParamStore ps;
    RandomStream rng(5);
    DenoiserConfig cfg = tiny_config();
    cfg.n_classes = 4;
    Denoiser dn(ps, cfg, rng);
    RandomStream drng(6);
    Mat z = testutil::random_matrix(cfg.n_latents, cfg.latent_dim, drng);
    Mat a = dn.denoise(z, 0.8, 0);
    Mat b = dn.denoise(z, 0.8, 3);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

    // perturbing one class embedding breaks the invariance for that class only
    ps.get("dn.class_embed").value_mut()(3, 0) = 0.5;
    Mat c = dn.denoise(z, 0.8, 3);
    CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
    CHECK((a - dn.denoise(z, 0.8, 1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sampler evaluation counts: Euler N, Heun 2N-1") {
    nn::ParamStore ps;
    RandomStream rng(7);
    Denoiser dn(ps, tiny_config(), rng);

    RandomStream s1(8);
    dn.reset_eval_count();
    diffusion::sample_latents_one(dn, 18, -1, s1, /*heun=*/false);
    CHECK(dn.eval_count() == 18);

    RandomStream s2(8);
    dn.reset_eval_count();
    diffusion::sample_latents_one(dn, 18, -1, s2, /*heun=*/true);
    CHECK(dn.eval_count() == 2 * 18 - 1);
}

TEST_CASE("identical seeds give identical samples") {
    nn::ParamStore ps;
    RandomStream rng(9);
    Denoiser dn(ps, tiny_config(), rng);
    RandomStream a(123), b(123), c(124);
    Mat za = diffusion::sample_latents_one(dn, 18, -1, a);
    Mat zb = diffusion::sample_latents_one(dn, 18, -1, b);
    Mat zc = diffusion::sample_latents_one(dn, 18, -1, c);
    CHECK((za - zb).cwiseAbs().maxCoeff() == 0.0);
    CHECK((za - zc).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("stub denoiser: the ODE contracts noise to zero") {
    // with D(x, sigma) == 0 the ODE is dx/dsigma = x/sigma, so x scales
    // linearly in sigma and the final sigma=0 step lands exactly at 0
    DenoiserConfig cfg = tiny_config();
    auto sigmas = diffusion::sigma_ladder(cfg, 18);
    RandomStream rng(10);
    Mat x = diffusion::sample_ode(
        [](const Mat& z, double) { return Mat::Zero(z.rows(), z.cols()); }, 4, 6, sigmas, rng,
        true);
    RandomStream rng_init(10);
    Mat init(4, 6);
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 6; ++j) init(i, j) = rng_init.normal();
    init *= sigmas[0];
    double bound = cfg.sigma_min / cfg.sigma_max * init.cwiseAbs().maxCoeff() + 1e-12;
    CHECK(x.cwiseAbs().maxCoeff() <= bound);

    // intermediate scaling check against the exact solution before the last step
    std::vector<double> partial(sigmas.begin(), sigmas.end() - 1);  // stop at sigma_min
    RandomStream rng2(11);
    Mat x_min = diffusion::sample_ode(
        [](const Mat& z, double) { return Mat::Zero(z.rows(), z.cols()); }, 4, 6, partial, rng2,
        true);
    RandomStream rng3(11);
    Mat x0(4, 6);
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 6; ++j) x0(i, j) = rng3.normal();
    x0 *= sigmas[0];
    // exact solution: x(sigma) = x0 * sigma/sigma0 (Heun is exact for linear slopes)
    Mat expect = x0 * (partial.back() / sigmas[0]);
    CHECK((x_min - expect).cwiseAbs().maxCoeff() < 1e-9 * sigmas[0]);
}

TEST_CASE("perfect denoiser gives zero loss; gradients check out on a 2x2 latent") {
    // loss formula with D == z0 is identically zero
    Mat z0 = Mat::Ones(2, 2);
    double w = diffusion::edm_loss_weight(0.5, 1.0);
    CHECK(w * (z0 - z0).squaredNorm() == 0.0);

    nn::ParamStore ps;
    RandomStream rng(12);
    DenoiserConfig cfg = tiny_config(2, 2);
    cfg.n_layers = 1;
    cfg.width = 16;
    cfg.n_heads = 2;
    Denoiser dn(ps, cfg, rng);

    RandomStream drng(13);
    Mat z = testutil::random_matrix(2, 2, drng);
    Mat noise = testutil::random_matrix(2, 2, drng);
    double loss_val = diffusion::diffusion_loss(dn, z, noise, 0.7, -1).scalar();
    CHECK(loss_val > 0.0);
    CHECK(std::isfinite(loss_val));

    auto loss = [&] { return diffusion::diffusion_loss(dn, z, noise, 0.7, -1); };
    CHECK(testutil::gradcheck(ps.get("dn.in.w"), loss, 1e-6, 16) < 1e-3);
    CHECK(testutil::gradcheck(ps.get("dn.block0.attn.q.w"), loss, 1e-6, 16) < 1e-3);
    CHECK(testutil::gradcheck(ps.get("dn.out.w"), loss, 1e-6, 16) < 1e-3);
}

TEST_CASE("latent standardization round trip and statistics") {
    RandomStream rng(14);
    std::vector<Mat> latents;
    for (int i = 0; i < 6; ++i) latents.push_back(testutil::random_matrix(5, 4, rng, 2.5));
    auto stats = diffusion::compute_latent_stats(latents);

    // standardized stack has ~zero mean / unit std per channel
    Mat stacked(30, 4);
    for (int i = 0; i < 6; ++i)
        stacked.middleRows(i * 5, 5) = diffusion::standardize(latents[static_cast<size_t>(i)], stats);
    CHECK(stacked.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    for (int j = 0; j < 4; ++j)
        CHECK(std::sqrt(stacked.col(j).squaredNorm() / 30.0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(stats.sigma_data == doctest::Approx(1.0).epsilon(1e-9));

    Mat back = diffusion::destandardize(diffusion::standardize(latents[0], stats), stats);
    CHECK((back - latents[0]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a small denoiser memorizes a tiny latent set") {
    // stand-in latents; the full pipeline version lives in the acceptance suite
    RandomStream rng(15);
    std::vector<Mat> latents;
    for (int i = 0; i < 4; ++i) latents.push_back(testutil::random_matrix(4, 6, rng, 1.0));
    auto stats = diffusion::compute_latent_stats(latents);
    std::vector<Mat> zs;
    for (const auto& z : latents) zs.push_back(diffusion::standardize(z, stats));

    nn::ParamStore ps;
    DenoiserConfig cfg = tiny_config(4, 6);
    cfg.n_classes = 4;
    cfg.sigma_data = stats.sigma_data;
    RandomStream init(16);
    Denoiser dn(ps, cfg, init);
    nn::AdamW opt;
    opt.lr = 2e-3;
    opt.weight_decay = 0.0;

    RandomStream train_rng(17);
    for (int step = 0; step < 800; ++step) {
        int idx = static_cast<int>(train_rng.uniform_int(4));
        double sigma = diffusion::sample_training_sigma(cfg, train_rng);
        Mat noise(4, 6);
        for (Eigen::Index i = 0; i < 4; ++i)
            for (Eigen::Index j = 0; j < 6; ++j) noise(i, j) = train_rng.normal();
        ps.zero_grads();
        Tensor loss = diffusion::diffusion_loss(dn, zs[static_cast<size_t>(idx)], noise, sigma, idx);
        ad::backward(loss);
        opt.step(ps);
    }

    // sampled latents stay in a sane range: per-channel std within [0.5, 2]
    std::vector<Mat> samples;
    for (int i = 0; i < 8; ++i) {
        RandomStream srng(mix_seed(18, static_cast<std::uint64_t>(i)));
        samples.push_back(diffusion::sample_latents_one(dn, 18, i % 4, srng));
    }
    Mat stacked(8 * 4, 6);
    for (int i = 0; i < 8; ++i) stacked.middleRows(i * 4, 4) = samples[static_cast<size_t>(i)];
    for (int j = 0; j < 6; ++j) {
        double mean = stacked.col(j).mean();
        double sd = std::sqrt((stacked.col(j).array() - mean).square().mean());
        CHECK(sd >= 0.5);
        CHECK(sd <= 2.0);
    }

    // conditioning matters after training
    RandomStream sa(99), sb(99);
    Mat c0 = diffusion::sample_latents_one(dn, 18, 0, sa);
    Mat c1 = diffusion::sample_latents_one(dn, 18, 1, sb);
    CHECK((c0 - c1).cwiseAbs().maxCoeff() > 1e-6);
}
