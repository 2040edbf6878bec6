#include "sadcoeff/gradcheck.hpp"

#include "sadcoeff/errors.hpp"
#include "sadcoeff/expnet.hpp"
#include "sadcoeff/mapper_train.hpp"
#include "sadcoeff/posevae.hpp"

#include <cstdio>

namespace sadcoeff {

namespace {

nn::Tensor random_tensor(nn::Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(nn::numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return nn::Tensor::constant(std::move(shape), std::move(v));
}

nn::Tensor normal_tensor(nn::Shape shape, Rng& rng, double sd) {
    std::vector<double> v(nn::numel(shape));
    for (auto& x : v) x = rng.normal(0.0, sd);
    return nn::Tensor::constant(std::move(shape), std::move(v));
}

}  // namespace

double GradCheckSuite::max_rel_error() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.rel_error);
    return m;
}

GradCheckSuite gradcheck_expnet(std::uint64_t seed, const nn::GradCheckOptions& opt) {
    Rng rng(derive_seed(seed, 1));
    ExpNet net(ExpNetConfig{{4, 4, 8, 8}}, derive_seed(seed, 2));
    const BlendshapeLandmarkModel lm = gen_landmark_model(seed);
    const CorpusAssets assets{lm, LipTeacherOracle{}, gen_reading_oracle(seed, lm), KeypointOracle{}};
    ExpBatch batch;
    batch.sequences = 2;
    batch.frames = kExpFrames;
    const int n = batch.sequences * batch.frames;
    batch.windows = normal_tensor({n, 1, kWindowFrames, kMelBands}, rng, 1.0);
    batch.beta0 = normal_tensor({n, kExpressionDim}, rng, 0.3);
    batch.blink = random_tensor({n, 1}, rng, 0.1, 0.9);
    batch.target = normal_tensor({n, kExpressionDim}, rng, 0.5);
    const ExpLossWeights w;
    return GradCheckSuite{"expnet", nn::gradient_check(
                                        net.params(), [&] { return expnet_loss(net, batch, assets, w).total; }, opt)};
}

GradCheckSuite gradcheck_posevae(std::uint64_t seed, const nn::GradCheckOptions& opt) {
    Rng rng(derive_seed(seed, 3));
    const PoseVAEConfig cfg{{4, 4, 8, 8}, 4, 8, kMaxStyles};
    PoseVAE vae(cfg, derive_seed(seed, 4));
    const PoseDiscriminator disc(derive_seed(seed, 5));
    PoseBatch batch;
    batch.size = 2;
    batch.conds.windows = normal_tensor({batch.size * kPoseFrames, 1, kWindowFrames, kMelBands}, rng, 1.0);
    std::vector<double> style(static_cast<std::size_t>(batch.size) * kMaxStyles, 0.0);
    style[3] = 1.0;
    style[kMaxStyles + 17] = 1.0;
    batch.conds.style = nn::Tensor::constant({batch.size, kMaxStyles}, std::move(style));
    batch.conds.rho0 = normal_tensor({batch.size, kPoseDim}, rng, 0.2);
    batch.res = normal_tensor({batch.size, kPoseFlat}, rng, 0.2);
    batch.noise = normal_tensor({batch.size, cfg.latent_dim}, rng, 1.0);
    const PoseLossWeights w{1.0, 1.0, 0.0};
    return GradCheckSuite{"posevae", nn::gradient_check(
                                         vae.params(), [&] { return posevae_loss(vae, disc, batch, w).total; }, opt)};
}

GradCheckSuite gradcheck_mapper(std::uint64_t seed, const nn::GradCheckOptions& opt) {
    Rng rng(derive_seed(seed, 6));
    constexpr int k = 4;
    MappingNet net(MapperConfig{8, k}, derive_seed(seed, 7));
    MapperBatch batch;
    batch.input = normal_tensor({3, kMotionDim, 1, kCoeffWindowFrames}, rng, 0.5);
    batch.target = normal_tensor({3, 3 * k}, rng, 1.0);
    Eigen::MatrixXd canonical(k, 3);
    for (int i = 0; i < k; ++i)
        for (int a = 0; a < 3; ++a) canonical(i, a) = rng.normal();
    return GradCheckSuite{"kpmapper", nn::gradient_check(
                                          net.params(), [&] { return mapper_loss(net, batch, canonical, 20.0); }, opt)};
}

std::vector<GradCheckSuite> run_gradchecks(const std::string& module, std::uint64_t seed, const nn::GradCheckOptions& opt) {
    std::vector<GradCheckSuite> out;
    const bool all = module == "all";
    if (!all && module != "expnet" && module != "posevae" && module != "kpmapper") {
        throw UsageError("gradcheck: unknown module '" + module + "' (expected expnet, posevae, kpmapper or all)");
    }
    if (all || module == "expnet") out.push_back(gradcheck_expnet(seed, opt));
    if (all || module == "posevae") out.push_back(gradcheck_posevae(seed, opt));
    if (all || module == "kpmapper") out.push_back(gradcheck_mapper(seed, opt));
    return out;
}

void print_gradcheck(std::ostream& os, const std::vector<GradCheckSuite>& suites) {
    char line[256];
    for (const auto& s : suites) {
        for (const auto& g : s.groups) {
            std::snprintf(line, sizeof line, "%-9s %-32s n=%-5zu kinks=%-3zu max_abs=%.3e rel=%.3e\n",
                          s.module.c_str(), g.name.c_str(), g.checked, g.kinks, g.max_abs_error, g.rel_error);
            os << line;
        }
        std::snprintf(line, sizeof line, "%s %s max_rel=%.3e\n", s.passed() ? "PASS" : "FAIL", s.module.c_str(),
                      s.max_rel_error());
        os << line;
    }
}

}  // namespace sadcoeff
