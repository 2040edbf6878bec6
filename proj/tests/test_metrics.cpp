#include "doctest.h"

#include "sadcoeff/errors.hpp"
#include "sadcoeff/metrics.hpp"
#include "sadcoeff/rng.hpp"

#include <cmath>

using namespace sadcoeff;

namespace {

// Mean over dims and frames of the population std across sequences.
double diversity_oracle(const std::vector<PoseSequence>& seqs) {
    const double n = static_cast<double>(seqs.size());
    const auto frames = seqs[0].rows();
    double total = 0.0;
    for (int d = 0; d < kPoseDim; ++d) {
        for (Eigen::Index t = 0; t < frames; ++t) {
            double s = 0.0, s2 = 0.0;
            for (const auto& q : seqs) s += q(t, d), s2 += q(t, d) * q(t, d);
            total += std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
        }
    }
    return total / (kPoseDim * static_cast<double>(frames));
}

Landmarks2D eyes_with_ratio(double r) {
    Landmarks2D l;
    const auto set = [&](int i, double x, double y) { l.points.row(i) << x, y; };
    // Width 4; each eye's lid opening is 2r, so the summed height is 4r.
    set(36, 0, 0), set(39, 4, 0), set(37, 1, 2 * r), set(38, 3, 2 * r), set(40, 3, 0), set(41, 1, 0);
    set(42, 10, 0), set(45, 14, 0), set(43, 11, 2 * r), set(44, 13, 2 * r), set(46, 13, 0), set(47, 11, 0);
    return l;
}

}  // namespace

TEST_CASE("pose diversity") {
    std::vector<PoseSequence> same(4, PoseSequence::Constant(12, kPoseDim, -0.7));
    CHECK(pose_diversity(same) == 0.0);

    std::vector<PoseSequence> two{PoseSequence::Zero(8, kPoseDim), PoseSequence::Zero(8, kPoseDim)};
    two[1].col(2).setConstant(2.0);
    CHECK(pose_diversity(two) == 1.0 / 6.0);

    Rng rng(5);
    std::vector<PoseSequence> seqs(5, PoseSequence(30, kPoseDim));
    for (auto& s : seqs)
        for (auto& v : s.reshaped()) v = rng.normal();
    const double d = pose_diversity(seqs);
    CHECK(d == doctest::Approx(diversity_oracle(seqs)).epsilon(1e-12));
    std::swap(seqs[0], seqs[3]);
    CHECK(pose_diversity(seqs) == doctest::Approx(d).epsilon(1e-14));

    CHECK_THROWS_AS(pose_diversity(std::vector<PoseSequence>(1, PoseSequence::Zero(3, kPoseDim))), InvalidArgument);
}

TEST_CASE("motion beats") {
    CHECK(motion_beats(PoseSequence::Constant(50, kPoseDim, 0.2), 25.0).empty());

    SUBCASE("triangle-wave yaw turns") {
        const double fps = 25.0;
        PoseSequence s = PoseSequence::Zero(125, kPoseDim);
        for (int t = 0; t < s.rows(); ++t) {
            const double ph = std::fmod(t / fps + 0.13, 1.0);
            s(t, 0) = ph < 0.5 ? 4.0 * ph - 1.0 : 3.0 - 4.0 * ph;
        }
        std::vector<double> turns;
        for (double t = 0.5 - 0.13; t < 5.0; t += 0.5) turns.push_back(t);
        const auto beats = motion_beats(s, fps);
        CHECK(beats.size() == turns.size());
        for (double b : beats) {
            double best = 1e9;
            for (double t : turns) best = std::min(best, std::abs(b - t));
            CHECK(best <= 1.0 / fps);
        }
    }
}

TEST_CASE("beat align") {
    const std::vector<double> beats{0.2, 1.0, 1.7};
    CHECK(beat_align(beats, beats) == 1.0);
    const std::vector<double> a{1.0}, m{2.0}, none;
    CHECK(std::abs(beat_align(a, m, {1.0}) - std::exp(-0.5)) < 1e-15);
    CHECK(std::abs(beat_align(a, m, {1.0}) - 0.60653) < 1e-5);
    CHECK(beat_align(a, none) == 0.0);
    CHECK(beat_align(none, m) == 0.0);

    // Moving the motion beat away never raises the score.
    double prev = 2.0;
    for (double off = 0.0; off < 1.0; off += 0.05) {
        const std::vector<double> mm{1.0 + off};
        const double s = beat_align(a, mm, {0.1});
        CHECK(s <= prev);
        prev = s;
    }
}

TEST_CASE("correlations") {
    const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 6, 8, 10}, r{5, 4, 3, 2, 1}, sq{1, 4, 9, 16, 25};
    CHECK(pearson(x, y) == doctest::Approx(1.0));
    CHECK(pearson(x, r) == doctest::Approx(-1.0));
    CHECK(spearman(x, sq) == 1.0);
    const std::vector<double> flat{3, 3, 3, 3, 3};
    CHECK_THROWS_AS(pearson(x, flat), DegenerateInput);
}

TEST_CASE("blink recovery") {
    std::vector<double> z{0.0, 0.3, 0.5, 0.9, 1.0, 0.2};
    std::vector<Landmarks2D> same, inverse, noisy;
    for (double v : z) same.push_back(eyes_with_ratio(v)), inverse.push_back(eyes_with_ratio(1.0 - v));
    CHECK(blink_recovery(same, z) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(blink_recovery(inverse, z) == doctest::Approx(-1.0).epsilon(1e-12));

    Rng rng(17);
    std::vector<double> zz;
    for (int t = 0; t < 200; ++t) {
        const double v = rng.uniform();
        zz.push_back(v);
        noisy.push_back(eyes_with_ratio(v + rng.normal(0.0, 0.1) + 0.5));
    }
    CHECK(blink_recovery(noisy, zz) > 0.9);

    const std::vector<double> constant(6, 0.5);
    CHECK_THROWS_AS(blink_recovery(same, constant), DegenerateInput);
}
