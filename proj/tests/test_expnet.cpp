#include "doctest.h"

#include "fixtures.hpp"

#include "sadcoeff/errors.hpp"
#include "sadcoeff/expnet.hpp"

#include <cmath>

using namespace sadcoeff;

namespace {

std::vector<MelWindow> random_windows(int n, Rng& rng) {
    std::vector<MelWindow> w(static_cast<std::size_t>(n));
    for (auto& m : w)
        for (auto& v : m.window.reshaped()) v = rng.normal(-1.6, 1.0);
    return w;
}

Landmarks2D eyes_with_ratio(double r) {
    Landmarks2D l;
    for (int i = 0; i < kNumLandmarks; ++i) l.points.row(i) << 0.5 * i, 0.25 * i;
    const auto set = [&](int i, double x, double y) { l.points.row(i) << x, y; };
    set(36, 0, 0), set(39, 4, 0), set(37, 1, 2 * r), set(38, 3, 2 * r), set(40, 3, 0), set(41, 1, 0);
    set(42, 10, 0), set(45, 14, 0), set(43, 11, 2 * r), set(44, 13, 2 * r), set(46, 13, 0), set(47, 11, 0);
    return l;
}

}  // namespace

TEST_CASE("zero head returns the head bias for every frame") {
    ExpNet net(ExpNetConfig{{2, 2, 4, 4}}, 1);
    ExpressionVector bias;
    for (int k = 0; k < kExpressionDim; ++k) bias[k] = nn::to_f32(0.01 * k - 0.2);
    net.zero_head();
    net.set_head_bias(bias);
    Rng rng(2);
    const auto w = random_windows(6, rng);
    const std::vector<double> z{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    for (const auto& b : net.generate(w, ExpressionVector::Constant(0.3), z)) CHECK(b == bias);
}

TEST_CASE("identical windows and blink give identical frames") {
    ExpNet net(ExpNetConfig{{2, 2, 4, 4}}, 3);
    Rng rng(4);
    const auto one = random_windows(1, rng);
    const std::vector<MelWindow> w(4, one[0]);
    const auto out = net.generate(w, ExpressionVector::Zero(), std::vector<double>(4, 0.5));
    for (const auto& b : out) CHECK(b == out[0]);
}

TEST_CASE("frames are independent of each other") {
    ExpNet net(ExpNetConfig{{2, 2, 4, 4}}, 5);
    Rng rng(6);
    auto w = random_windows(5, rng);
    const std::vector<double> z(5, 0.5);
    const auto before = net.generate(w, ExpressionVector::Zero(), z);
    for (auto& v : w[2].window.reshaped()) v += rng.normal();
    const auto after = net.generate(w, ExpressionVector::Zero(), z);
    for (int t = 0; t < 5; ++t) {
        if (t == 2) CHECK(after[2] != before[2]);
        else CHECK(after[static_cast<std::size_t>(t)] == before[static_cast<std::size_t>(t)]);
    }
}

TEST_CASE("generate rejects a blink length mismatch") {
    ExpNet net(ExpNetConfig{{2, 2, 4, 4}}, 7);
    Rng rng(8);
    const auto w = random_windows(3, rng);
    CHECK_THROWS_AS(net.generate(w, ExpressionVector::Zero(), std::vector<double>(2, 0.5)), InvalidArgument);
}

TEST_CASE("distillation loss") {
    Rng rng(9);
    std::vector<ExpressionVector> a(7), b(7);
    for (auto& v : a) v = ExpressionVector::NullaryExpr([&] { return rng.normal(); });
    for (auto& v : b) v = ExpressionVector::NullaryExpr([&] { return rng.normal(); });
    CHECK(loss_distill(a, a) == 0.0);
    std::vector<ExpressionVector> shifted = a;
    for (auto& v : shifted) v.array() += 1.0;
    CHECK(loss_distill(shifted, a) == doctest::Approx(1.0).epsilon(1e-14));
    double want = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t)
        for (int k = 0; k < kExpressionDim; ++k) want += (a[t][k] - b[t][k]) * (a[t][k] - b[t][k]);
    want /= static_cast<double>(a.size() * kExpressionDim);
    CHECK(std::abs(loss_distill(a, b) - want) <= 1e-10);
}

TEST_CASE("landmark loss") {
    const ExpLossWeights w;
    std::vector<Landmarks2D> pred, teacher;
    std::vector<double> z;
    for (int t = 0; t < 5; ++t) {
        const double r = 0.2 + 0.1 * t;
        pred.push_back(eyes_with_ratio(r));
        teacher.push_back(eyes_with_ratio(r));
        z.push_back(r);
    }
    CHECK(loss_lks(pred, teacher, z, w) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    for (double& v : z) v -= 0.1;
    CHECK(loss_lks(pred, teacher, z, w) == doctest::Approx(100.0).epsilon(1e-12));

    SUBCASE("non-eye term is the mean squared distance over non-eye landmarks") {
        Rng rng(10);
        std::vector<Landmarks2D> moved = pred;
        double want = 0.0;
        for (auto& l : moved)
            for (int i : non_eye_landmarks()) {
                const double dx = rng.normal(), dy = rng.normal();
                l.points(i, 0) += dx, l.points(i, 1) += dy;
                want += dx * dx + dy * dy;
            }
        want /= 5.0 * static_cast<double>(non_eye_landmarks().size());
        ExpLossWeights no_eye = w;
        no_eye.eye = 0.0;
        CHECK(loss_lks(moved, teacher, z, no_eye) == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("reading loss") {
    Rng rng(11);
    Eigen::MatrixXd t(4, kNumChars), p(4, kNumChars);
    for (auto& v : t.reshaped()) v = rng.normal();
    for (auto& v : p.reshaped()) v = rng.normal();
    const auto ce = [](const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
        double acc = 0.0;
        for (int r = 0; r < pred.rows(); ++r) {
            const Eigen::ArrayXd pt = (target.row(r).array() - target.row(r).maxCoeff()).exp();
            const Eigen::ArrayXd pq = (pred.row(r).array() - pred.row(r).maxCoeff()).exp();
            const Eigen::ArrayXd pn = pt / pt.sum(), qn = pq / pq.sum();
            for (int k = 0; k < pred.cols(); ++k) acc -= pn[k] * std::log(qn[k]);
        }
        return acc / static_cast<double>(pred.rows());
    };
    CHECK(std::abs(loss_read(p, t) - ce(p, t)) <= 1e-10);
    CHECK(std::abs(loss_read(t, t) - ce(t, t)) <= 1e-10);
    CHECK(loss_read(Eigen::MatrixXd::Zero(2, kNumChars), Eigen::MatrixXd::Zero(2, kNumChars)) ==
          doctest::Approx(std::log(28.0)).epsilon(1e-14));
}

TEST_CASE("ExpNet loss composition") {
    ExpLossWeights zero{0, 0, 0, 200};
    CHECK(combine_exp_loss(zero, 3.0, 4.0, 5.0) == 0.0);
    const ExpLossWeights w;
    CHECK(combine_exp_loss(w, 1, 1, 1) == 2.0 + 0.01 + 0.01);

    const Corpus& corpus = tiny_corpus();
    ExpNet net(ExpNetConfig{{2, 2, 4, 4}}, 12);
    Rng rng(13);
    const ExpBatch batch = sample_exp_batch(corpus, 2, 5, rng);
    const ExpLoss l = expnet_loss(net, batch, corpus.assets, w);
    const double want = w.distill * l.distill.item() + w.read * l.read.item() + w.lks * l.lks.item();
    CHECK(std::abs(l.total.item() - want) <= 1e-10);
}

TEST_CASE("ExpNet training contract") {
    const Corpus& corpus = tiny_corpus();
    RunConfig cfg = tiny_config();
    cfg.expnet_steps = 3;

    SUBCASE("learning rate 0 leaves parameters bit identical") {
        cfg.expnet_lr = 0.0;
        const ExpNet fresh(expnet_config(cfg), derive_seed(cfg.seed, 0xE1));
        const auto r = train_expnet(corpus, cfg, "");
        CHECK(r.net->params().flatten() == fresh.params().flatten());
    }
    SUBCASE("same seed gives the same history") {
        const auto a = train_expnet(corpus, cfg, "");
        const auto b = train_expnet(corpus, cfg, "");
        CHECK(a.history.to_csv() == b.history.to_csv());
        CHECK(a.net->params().flatten() == b.net->params().flatten());
    }
}

TEST_CASE("ExpNet checkpoint round trip and resume") {
    const Corpus& corpus = tiny_corpus();
    RunConfig cfg = tiny_config();
    cfg.expnet_steps = 4;
    const auto dir = unit_dir("expnet_ckpt");
    const auto full = train_expnet(corpus, cfg, dir / "full");
    const auto loaded = load_expnet(dir / "full");
    CHECK(loaded->params().flatten() == full.net->params().flatten());

    RunConfig half = cfg;
    half.expnet_steps = 2;
    train_expnet(corpus, half, dir / "resumed");
    const auto resumed = train_expnet(corpus, cfg, dir / "resumed", true);
    CHECK(resumed.net->params().flatten() == full.net->params().flatten());
}
