#include "doctest.h"

#include "fixtures.hpp"

#include "sadcoeff/errors.hpp"
#include "sadcoeff/posevae.hpp"

#include <cmath>

using namespace sadcoeff;

namespace {

PoseVAEConfig tiny_vae() { return PoseVAEConfig{{2, 2, 2, 2}, 4, 8, 3}; }

PoseConds tiny_conds(int batch, int num_styles, Rng& rng) {
    PoseConds c;
    std::vector<double> w(static_cast<std::size_t>(batch) * kPoseFrames * kWindowFrames * kMelBands);
    for (auto& v : w) v = rng.normal();
    c.windows = nn::Tensor::constant({batch * kPoseFrames, 1, kWindowFrames, kMelBands}, w);
    std::vector<double> s(static_cast<std::size_t>(batch * num_styles), 0.0);
    for (int b = 0; b < batch; ++b) s[static_cast<std::size_t>(b * num_styles + b % num_styles)] = 1.0;
    c.style = nn::Tensor::constant({batch, num_styles}, s);
    std::vector<double> r(static_cast<std::size_t>(batch * kPoseDim));
    for (auto& v : r) v = rng.normal(0.0, 0.1);
    c.rho0 = nn::Tensor::constant({batch, kPoseDim}, r);
    return c;
}

std::vector<MelWindow> windows(int n, Rng& rng) {
    std::vector<MelWindow> w(static_cast<std::size_t>(n));
    for (auto& m : w)
        for (auto& v : m.window.reshaped()) v = rng.normal(-1.6, 1.0);
    return w;
}

}  // namespace

TEST_CASE("pose residuals") {
    const PoseSequence constant = PoseSequence::Constant(10, kPoseDim, 0.4);
    CHECK(pose_residual(constant).res.isZero(0.0));

    Eigen::Matrix<double, 1, kPoseDim> v;
    v << 0.1, -0.2, 0.05, 1.0, -2.0, 0.5;
    PoseSequence ramp(8, kPoseDim);
    for (int t = 0; t < 8; ++t) ramp.row(t) = t * v;
    const PoseResidual r = pose_residual(ramp);
    for (int t = 0; t < 8; ++t) CHECK((r.res.row(t) - t * v).norm() < 1e-15);
    CHECK((recompose(r.rho0, r.res) - ramp).norm() == 0.0);
}

TEST_CASE("style one-hot") {
    const auto v = style_onehot(2, 5);
    CHECK(v.sum() == 1.0);
    CHECK(v[2] == 1.0);
    CHECK_THROWS_AS(style_onehot(5, 5), InvalidArgument);
    CHECK_THROWS_AS(style_onehot(-1, 5), InvalidArgument);
}

TEST_CASE("reparameterization") {
    const nn::Tensor mu = nn::Tensor::constant({1, 3}, {0.5, -1.0, 2.0});
    const LatentGaussian g{mu, nn::Tensor::constant({1, 3}, {0.0, 0.0, 0.0})};
    CHECK(reparameterize(g, nn::Tensor::zeros({1, 3})).values() == mu.values());
    const auto z = reparameterize(g, nn::Tensor::constant({1, 3}, {0.0, 1.0, 0.0})).values();
    CHECK(z == std::vector<double>{0.5, 0.0, 2.0});

    // Sample mean over many draws stays within 3 sigma / sqrt(n) of mu.
    const LatentGaussian wide{mu, nn::Tensor::constant({1, 3}, {0.4, -0.6, 1.2})};
    Rng rng(3);
    const int n = 100000;
    std::vector<double> acc(3, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto s = reparameterize(wide, nn::Tensor::constant({1, 3}, {rng.normal(), rng.normal(), rng.normal()})).values();
        for (int d = 0; d < 3; ++d) acc[static_cast<std::size_t>(d)] += s[static_cast<std::size_t>(d)];
    }
    for (int d = 0; d < 3; ++d) {
        const double sigma = std::exp(0.5 * wide.log_var.at(static_cast<std::size_t>(d)));
        CHECK(std::abs(acc[static_cast<std::size_t>(d)] / n - mu.at(static_cast<std::size_t>(d))) < 3.0 * sigma / std::sqrt(n));
    }
}

TEST_CASE("KL to the standard normal") {
    CHECK(kl_to_standard_normal(Eigen::VectorXd::Zero(8), Eigen::VectorXd::Zero(8)) == 0.0);
    CHECK(kl_to_standard_normal(Eigen::VectorXd::Ones(64), Eigen::VectorXd::Zero(64)) == 32.0);
    // Batched tensor form: mean over rows of the per-row sum.
    const LatentGaussian g{nn::Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 2.0}), nn::Tensor::constant({2, 2}, {0.0, 0.0, 0.0, 0.0})};
    CHECK(kl_to_standard_normal(g).item() == doctest::Approx((0.5 + 2.0) / 2.0));
}

TEST_CASE("zero output layer") {
    PoseVAE vae(tiny_vae(), 1);
    vae.zero_output();
    Rng rng(2);
    const PoseConds c = tiny_conds(2, 3, rng);
    const nn::Tensor audio = vae.audio_features(c.windows);
    const nn::Tensor z = nn::Tensor::constant({2, 4}, {1, 2, 3, 4, -1, -2, -3, -4});
    const nn::Tensor out = vae.decode(z, c, audio);
    for (double v : out.values()) CHECK(v == 0.0);

    const auto w = windows(70, rng);
    PoseCoeffs rho0;
    rho0.rot = {0.1, 0.2, -0.1};
    rho0.trans = {1, 2, 3};
    const PoseSequence s = sample_poses(vae, rho0, w, 1, 70, 9);
    for (int t = 0; t < s.rows(); ++t) CHECK((s.row(t) - recompose(rho0, PoseSequence::Zero(1, kPoseDim))).norm() == 0.0);
}

TEST_CASE("decoder is a function of (z, conds)") {
    PoseVAE vae(tiny_vae(), 4);
    Rng rng(5);
    const PoseConds c = tiny_conds(2, 3, rng);
    const nn::Tensor audio = vae.audio_features(c.windows);
    const nn::Tensor z = nn::Tensor::constant({2, 4}, {0.3, -0.1, 0.7, 0.0, 1.0, 0.5, -0.5, 0.2});
    CHECK(vae.decode(z, c, audio).values() == vae.decode(z, c, audio).values());
}

TEST_CASE("encoder shape contracts") {
    PoseVAE vae(tiny_vae(), 6);
    Rng rng(7);
    PoseConds c = tiny_conds(1, 3, rng);
    const nn::Tensor audio = vae.audio_features(c.windows);
    CHECK_THROWS_AS(vae.encode(nn::Tensor::zeros({1, 31 * kPoseDim}), c, audio), InvalidArgument);
    c.style = nn::Tensor();
    CHECK_THROWS_AS(vae.encode(nn::Tensor::zeros({1, kPoseFlat}), c, audio), InvalidArgument);
}

TEST_CASE("pose loss composition") {
    const PoseLossWeights w;
    CHECK(combine_pose_loss(w, 1, 1, 1) == 1.0 + 1.0 + 0.7);
    const PoseLossWeights mse_only{1.0, 0.0, 0.0};
    CHECK(combine_pose_loss(mse_only, 0.37, 5.0, 9.0) == 0.37);

    const Corpus& corpus = tiny_corpus();
    PoseVAEConfig cfg = tiny_vae();
    cfg.num_styles = corpus.num_styles;
    PoseVAE vae(cfg, 8);
    PoseDiscriminator disc(9);
    Rng rng(10);
    const PoseBatch batch = sample_pose_batch(corpus, 3, cfg.latent_dim, cfg.num_styles, rng);
    const PoseLoss l = posevae_loss(vae, disc, batch, w);
    const double want = w.mse * l.mse.item() + w.kl * l.kl.item() + w.gan * l.gan.item();
    CHECK(std::abs(l.total.item() - want) <= 1e-10);
    const PoseLoss m = posevae_loss(vae, disc, batch, mse_only);
    CHECK(m.total.item() == m.mse.item());

    SUBCASE("perfect reconstruction with a standard-normal posterior costs nothing") {
        const nn::Tensor zero = nn::Tensor::zeros({2, kPoseFlat});
        const LatentGaussian g{nn::Tensor::zeros({2, 4}), nn::Tensor::zeros({2, 4})};
        CHECK(pose_mse(zero, zero).item() == 0.0);
        CHECK(kl_to_standard_normal(g).item() == 0.0);
    }

    SUBCASE("mse is reported in raw units") {
        std::vector<double> p(kPoseFlat, 0.0);
        p[3] = 1.0;  // first-frame x translation, scaled by 10
        p[0] = 1.0;  // first-frame yaw, scale 1
        const double v = pose_mse(nn::Tensor::constant({1, kPoseFlat}, p), nn::Tensor::zeros({1, kPoseFlat})).item();
        CHECK(v == doctest::Approx((1.0 + 100.0) / kPoseFlat).epsilon(1e-14));
    }
}

TEST_CASE("discriminator") {
    PoseDiscriminator d(11);
    const nn::Tensor s = d(nn::Tensor::zeros({3, kPoseFlat}));
    CHECK(s.shape() == nn::Shape{3, 4});
    CHECK(PoseDiscriminator::receptive_field() == 18);
    // Least-squares targets: real 1, fake 0.
    CHECK(discriminator_loss(nn::Tensor::constant({1, 2}, {1, 1}), nn::Tensor::zeros({1, 2})).item() == 0.0);
    CHECK(generator_gan_loss(nn::Tensor::constant({1, 2}, {1, 1})).item() == 0.0);
}

TEST_CASE("chunked sampling") {
    PoseVAE vae(tiny_vae(), 12);
    Rng rng(13);
    const auto w = windows(100, rng);
    PoseCoeffs rho0;
    const PoseSequence a = sample_poses(vae, rho0, w, 0, 100, 1);
    CHECK(a.rows() == 100);
    CHECK(a.allFinite());
    CHECK(sample_poses(vae, rho0, w, 0, 100, 1) == a);
    CHECK((sample_poses(vae, rho0, w, 0, 100, 2) - a).norm() > 0.0);
    // A single 32-frame chunk is the decoder output itself, no blending.
    const PoseSequence one = sample_poses(vae, rho0, w, 2, kPoseFrames, 3);
    const PoseSequence longer = sample_poses(vae, rho0, w, 2, 40, 3);
    CHECK(one == longer.topRows(kPoseFrames - kCrossfadeFrames));
}

TEST_CASE("PoseVAE training contract") {
    const Corpus& corpus = tiny_corpus();
    RunConfig cfg = tiny_config();
    cfg.posevae_steps = 3;
    const auto a = train_posevae(corpus, cfg, "");
    const auto b = train_posevae(corpus, cfg, "");
    CHECK(a.history.to_csv() == b.history.to_csv());
    cfg.posevae_lr = 0.0;
    const PoseVAE fresh(posevae_config(cfg), derive_seed(cfg.seed, 0xB1));
    const auto c = train_posevae(corpus, cfg, "");
    CHECK(c.vae->params().flatten() == fresh.params().flatten());
}
