#include "sadcoeff/posevae.hpp"

#include "sadcoeff/errors.hpp"

#include <cmath>

namespace sadcoeff {

namespace {

constexpr std::uint64_t kStreamInit = 0xB1;
constexpr std::uint64_t kStreamDisc = 0xB2;
constexpr std::uint64_t kStreamTrain = 0xB3;
constexpr std::uint64_t kStreamEval = 0xB4;
constexpr std::uint64_t kStreamSample = 0xB5;
constexpr double kLogVarBound = 20.0;
constexpr double kLeakySlope = 0.2;

// Per-column weight scale^2 for the flat [B, 192] layout.
nn::Tensor raw_unit_weights(int rows) {
    std::vector<double> w(static_cast<std::size_t>(rows) * kPoseFlat);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double s = kPoseScale[i % kPoseDim];
        w[i] = s * s;
    }
    return nn::Tensor::constant({rows, kPoseFlat}, std::move(w));
}

// Flat t * 6 + d -> channel-major d * 32 + t.
const std::vector<int>& channel_major() {
    static const std::vector<int> perm = [] {
        std::vector<int> p(kPoseFlat);
        for (int d = 0; d < kPoseDim; ++d)
            for (int t = 0; t < kPoseFrames; ++t) p[static_cast<std::size_t>(d * kPoseFrames + t)] = t * kPoseDim + d;
        return p;
    }();
    return perm;
}

std::vector<double> scaled_pose(const PoseCoeffs& p) {
    const auto a = p.to_array();
    std::vector<double> v(kPoseDim);
    for (int d = 0; d < kPoseDim; ++d) v[static_cast<std::size_t>(d)] = a[static_cast<std::size_t>(d)] / kPoseScale[static_cast<std::size_t>(d)];
    return v;
}

}  // namespace

// ---- residuals -------------------------------------------------------------------------------

PoseResidual pose_residual(const PoseSequence& seq) {
    if (seq.rows() < 1) throw EmptyInput("pose_residual: empty sequence");
    PoseResidual r;
    r.rho0.rot = seq.row(0).head<3>().transpose();
    r.rho0.trans = seq.row(0).tail<3>().transpose();
    r.res = seq.rowwise() - seq.row(0);
    return r;
}

PoseSequence recompose(const PoseCoeffs& rho0, const PoseSequence& res) {
    Eigen::Matrix<double, 1, kPoseDim> row;
    row << rho0.rot.transpose(), rho0.trans.transpose();
    return res.rowwise() + row;
}

Eigen::VectorXd style_onehot(int style, int num_styles) {
    if (style < 0 || style >= num_styles) {
        throw InvalidArgument("style index " + std::to_string(style) + " outside [0, " + std::to_string(num_styles) + ")");
    }
    Eigen::VectorXd v = Eigen::VectorXd::Zero(num_styles);
    v[style] = 1.0;
    return v;
}

// ---- latent ----------------------------------------------------------------------------------

nn::Tensor reparameterize(const LatentGaussian& g, const nn::Tensor& noise) {
    if (noise.shape() != g.mu.shape()) throw InvalidArgument("reparameterize: noise shape must match mu");
    return nn::add(g.mu, nn::mul(nn::exp(nn::scale(g.log_var, 0.5)), noise));
}

nn::Tensor kl_to_standard_normal(const LatentGaussian& g) {
    const int batch = g.mu.dim(0);
    const nn::Tensor per = nn::sub(nn::add(nn::square(g.mu), nn::exp(g.log_var)), nn::add_scalar(g.log_var, 1.0));
    return nn::scale(nn::sum(per), 0.5 / batch);
}

double kl_to_standard_normal(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var) {
    if (mu.size() != log_var.size()) throw InvalidArgument("kl_to_standard_normal: size mismatch");
    double kl = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) kl += 0.5 * (mu[i] * mu[i] + std::exp(log_var[i]) - 1.0 - log_var[i]);
    return kl;
}

// ---- model -----------------------------------------------------------------------------------

PoseVAE::PoseVAE(const PoseVAEConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.latent_dim <= 0 || cfg.hidden_dim <= 0 || cfg.num_styles <= 0) {
        throw InvalidArgument("PoseVAE: latent, hidden and style sizes must be positive");
    }
    Rng rng(seed);
    audio_ = make_audio_encoder(params_, "posevae.audio", cfg.widths, rng);
    const int audio_dim = kPoseFrames * audio_.out_dim();
    enc1_ = nn::make_linear(params_, "posevae.enc1", kPoseFlat + cfg.num_styles + audio_dim + kPoseDim, cfg.hidden_dim, rng);
    enc2_ = nn::make_linear(params_, "posevae.enc2", cfg.hidden_dim, 2 * cfg.latent_dim, rng);
    style_emb_ = nn::make_linear(params_, "posevae.style", cfg.num_styles, cfg.latent_dim, rng);
    dec1_ = nn::make_linear(params_, "posevae.dec1", cfg.latent_dim + audio_dim + kPoseDim, cfg.hidden_dim, rng);
    dec2_ = nn::make_linear(params_, "posevae.dec2", cfg.hidden_dim, kPoseFlat, rng);
}

nn::Tensor PoseVAE::audio_features(const nn::Tensor& windows) const {
    if (windows.rank() != 4 || windows.dim(0) % kPoseFrames != 0) {
        throw InvalidArgument("PoseVAE: audio windows must be [B * 32, 1, 16, 80]");
    }
    const nn::Tensor f = audio_(windows);
    return nn::reshape(f, {windows.dim(0) / kPoseFrames, kPoseFrames * audio_.out_dim()});
}

namespace {

void check_conds(const PoseConds& c, int batch, int num_styles) {
    if (!c.windows.defined() || !c.style.defined() || !c.rho0.defined()) {
        throw InvalidArgument("PoseVAE: missing condition (audio, style and rho0 are all required)");
    }
    if (c.style.rank() != 2 || c.style.dim(0) != batch || c.style.dim(1) != num_styles) {
        throw InvalidArgument("PoseVAE: style must be [B, " + std::to_string(num_styles) + "]");
    }
    if (c.rho0.rank() != 2 || c.rho0.dim(0) != batch || c.rho0.dim(1) != kPoseDim) {
        throw InvalidArgument("PoseVAE: rho0 must be [B, 6]");
    }
}

}  // namespace

LatentGaussian PoseVAE::encode(const nn::Tensor& res, const PoseConds& conds, const nn::Tensor& audio) const {
    if (res.rank() != 2 || res.dim(1) != kPoseFlat) {
        throw InvalidArgument("PoseVAE::encode: residuals must be [B, 192] (T = 32), got " + nn::shape_string(res.shape()));
    }
    check_conds(conds, res.dim(0), cfg_.num_styles);
    const nn::Tensor h = nn::relu(enc1_(nn::concat_cols({res, conds.style, audio, conds.rho0})));
    const nn::Tensor out = enc2_(h);
    return LatentGaussian{nn::slice_cols(out, 0, cfg_.latent_dim),
                          nn::clamp(nn::slice_cols(out, cfg_.latent_dim, cfg_.latent_dim), -kLogVarBound, kLogVarBound)};
}

nn::Tensor PoseVAE::decode(const nn::Tensor& z, const PoseConds& conds, const nn::Tensor& audio) const {
    if (z.rank() != 2 || z.dim(1) != cfg_.latent_dim) throw InvalidArgument("PoseVAE::decode: z must be [B, Dz]");
    check_conds(conds, z.dim(0), cfg_.num_styles);
    const nn::Tensor zs = nn::add(z, style_emb_(conds.style));
    return dec2_(nn::relu(dec1_(nn::concat_cols({zs, audio, conds.rho0}))));
}

void PoseVAE::zero_output() {
    for (nn::Tensor* t : {&dec2_.w, &dec2_.b}) {
        auto d = t->mutable_data();
        std::fill(d.begin(), d.end(), 0.0);
    }
}

PoseDiscriminator::PoseDiscriminator(std::uint64_t seed) {
    Rng rng(seed);
    c1_ = nn::make_conv2d(params_, "posedisc.conv1", kPoseDim, 32, 1, 4, {1, 2, 0, 0}, rng);
    c2_ = nn::make_conv2d(params_, "posedisc.conv2", 32, 64, 1, 4, {1, 2, 0, 0}, rng);
    c3_ = nn::make_conv2d(params_, "posedisc.conv3", 64, 1, 1, 3, {1, 1, 0, 0}, rng);
}

nn::Tensor PoseDiscriminator::operator()(const nn::Tensor& res) const {
    if (res.rank() != 2 || res.dim(1) != kPoseFlat) throw InvalidArgument("PoseDiscriminator: input must be [B, 192]");
    const int b = res.dim(0);
    nn::Tensor x = nn::reshape(nn::select_cols(res, channel_major()), {b, kPoseDim, 1, kPoseFrames});
    x = nn::leaky_relu(c1_(x), kLeakySlope);
    x = nn::leaky_relu(c2_(x), kLeakySlope);
    x = c3_(x);
    return nn::reshape(x, {b, x.dim(3)});
}

// ---- losses ------------------------------------------------------------------------------------

nn::Tensor pose_mse(const nn::Tensor& pred, const nn::Tensor& target) {
    if (pred.shape() != target.shape() || pred.rank() != 2 || pred.dim(1) != kPoseFlat) {
        throw InvalidArgument("pose_mse: expected matching [B, 192] tensors");
    }
    return nn::mean(nn::mul(nn::square(nn::sub(pred, target)), raw_unit_weights(pred.dim(0))));
}

nn::Tensor generator_gan_loss(const nn::Tensor& fake_scores) { return nn::mean(nn::square(nn::add_scalar(fake_scores, -1.0))); }

nn::Tensor discriminator_loss(const nn::Tensor& real_scores, const nn::Tensor& fake_scores) {
    return nn::add(nn::mean(nn::square(nn::add_scalar(real_scores, -1.0))), nn::mean(nn::square(fake_scores)));
}

double combine_pose_loss(const PoseLossWeights& w, double mse, double kl, double gan) {
    return w.mse * mse + w.kl * kl + w.gan * gan;
}

PoseBatch sample_pose_batch(const Corpus& corpus, int size, int latent_dim, int num_styles, Rng& rng) {
    if (corpus.clips.empty()) throw EmptyInput("sample_pose_batch: empty corpus");
    if (size <= 0) throw InvalidArgument("sample_pose_batch: batch size must be positive");
    std::vector<const MelWindow*> wins;
    std::vector<double> style(static_cast<std::size_t>(size) * num_styles, 0.0), rho0, res;
    for (int b = 0; b < size; ++b) {
        const SynthClip& c = corpus.clips[rng.index(corpus.clips.size())];
        if (c.frames() < kPoseFrames) throw InvalidArgument("sample_pose_batch: clip shorter than 32 frames");
        if (c.style >= num_styles) throw InvalidArgument("sample_pose_batch: clip style outside the configured range");
        const int start = static_cast<int>(rng.index(static_cast<std::size_t>(c.frames() - kPoseFrames + 1)));
        style[static_cast<std::size_t>(b * num_styles + c.style)] = 1.0;
        for (int d = 0; d < kPoseDim; ++d) rho0.push_back(c.poses(start, d) / kPoseScale[static_cast<std::size_t>(d)]);
        for (int t = 0; t < kPoseFrames; ++t) {
            wins.push_back(&c.windows[static_cast<std::size_t>(start + t)]);
            for (int d = 0; d < kPoseDim; ++d) {
                res.push_back((c.poses(start + t, d) - c.poses(start, d)) / kPoseScale[static_cast<std::size_t>(d)]);
            }
        }
    }
    std::vector<double> noise(static_cast<std::size_t>(size) * latent_dim);
    for (auto& v : noise) v = rng.normal();
    PoseBatch batch;
    batch.size = size;
    batch.conds.windows = stack_windows(std::span<const MelWindow* const>(wins));
    batch.conds.style = nn::Tensor::constant({size, num_styles}, std::move(style));
    batch.conds.rho0 = nn::Tensor::constant({size, kPoseDim}, std::move(rho0));
    batch.res = nn::Tensor::constant({size, kPoseFlat}, std::move(res));
    batch.noise = nn::Tensor::constant({size, latent_dim}, std::move(noise));
    return batch;
}

PoseLoss posevae_loss(const PoseVAE& vae, const PoseDiscriminator& disc, const PoseBatch& batch,
                      const PoseLossWeights& w) {
    const nn::Tensor audio = vae.audio_features(batch.conds.windows);
    const LatentGaussian g = vae.encode(batch.res, batch.conds, audio);
    PoseLoss l;
    l.recon = vae.decode(reparameterize(g, batch.noise), batch.conds, audio);
    l.mse = pose_mse(l.recon, batch.res);
    l.kl = kl_to_standard_normal(g);
    l.gan = w.gan != 0.0 ? generator_gan_loss(disc(l.recon)) : nn::Tensor::scalar(0.0);
    l.total = nn::weighted_sum({{w.mse, l.mse}, {w.kl, l.kl}, {w.gan, l.gan}});
    return l;
}

double posevae_eval_mse(const PoseVAE& vae, const PoseBatch& batch) {
    nn::NoGradGuard guard;
    const nn::Tensor audio = vae.audio_features(batch.conds.windows);
    const LatentGaussian g = vae.encode(batch.res, batch.conds, audio);
    return pose_mse(vae.decode(g.mu, batch.conds, audio), batch.res).item();
}

PoseVAEConfig posevae_config(const RunConfig& cfg) {
    return PoseVAEConfig{cfg.posevae_widths, cfg.latent_dim, cfg.hidden_dim, cfg.num_styles};
}

PoseLossWeights pose_loss_weights(const RunConfig& cfg) {
    return PoseLossWeights{cfg.lambda_mse, cfg.lambda_kl, cfg.lambda_gan};
}

PoseBatch posevae_eval_batch(const Corpus& corpus, const RunConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kStreamEval));
    return sample_pose_batch(corpus, cfg.posevae_batch, cfg.latent_dim, cfg.num_styles, rng);
}

PoseTrainResult train_posevae(const Corpus& corpus, const RunConfig& cfg, const std::filesystem::path& out_dir,
                              bool resume, const ProgressFn& progress) {
    validate_config(cfg);
    std::vector<bool> seen(static_cast<std::size_t>(cfg.num_styles), false);
    for (const auto& c : corpus.clips)
        if (c.style < cfg.num_styles) seen[static_cast<std::size_t>(c.style)] = true;
    if (std::count(seen.begin(), seen.end(), true) < 2) throw InvalidArgument("train_posevae: corpus needs at least 2 styles");

    PoseTrainResult res;
    res.vae = std::make_unique<PoseVAE>(posevae_config(cfg), derive_seed(cfg.seed, kStreamInit));
    res.disc = std::make_unique<PoseDiscriminator>(derive_seed(cfg.seed, kStreamDisc));
    PoseVAE& vae = *res.vae;
    PoseDiscriminator& disc = *res.disc;
    nn::Adam opt_g(vae.params(), nn::AdamConfig{cfg.posevae_lr});
    nn::Adam opt_d(disc.params(), nn::AdamConfig{cfg.posevae_lr});
    res.history.columns = {"loss", "loss_mse", "loss_kl", "loss_gan", "loss_disc"};
    long start = 0;
    if (resume) {
        load_param_set(out_dir, "posevae", vae.params(), &opt_g);
        load_param_set(out_dir, "posedisc", disc.params(), &opt_d);
        start = load_train_step(out_dir);
        if (std::filesystem::exists(out_dir / "history.csv")) {
            res.history = TrainHistory::from_csv(read_text_file(out_dir / "history.csv"));
        }
    }
    const PoseLossWeights w = pose_loss_weights(cfg);
    const PoseBatch eval = posevae_eval_batch(corpus, cfg);
    res.eval_mse_initial = posevae_eval_mse(vae, eval);

    auto checkpoint = [&](long step) {
        if (out_dir.empty()) return;
        save_param_set(out_dir, "posevae", vae.params(), opt_g);
        save_param_set(out_dir, "posedisc", disc.params(), opt_d);
        save_train_state(out_dir, step, cfg);
        write_text_file(out_dir / "history.csv", res.history.to_csv());
    };

    for (long step = start; step < cfg.posevae_steps; ++step) {
        Rng rng(derive_seed(derive_seed(cfg.seed, kStreamTrain), static_cast<std::uint64_t>(step)));
        const PoseBatch batch = sample_pose_batch(corpus, cfg.posevae_batch, cfg.latent_dim, cfg.num_styles, rng);

        const PoseLoss l = posevae_loss(vae, disc, batch, w);
        require_finite(l.total.item(), "train-posevae", step, "loss");
        vae.params().zero_grad();
        disc.params().zero_grad();
        nn::backward(l.total);
        opt_g.step(vae.params());

        double d_value = 0.0;
        if (w.gan != 0.0) {
            const nn::Tensor fake = nn::Tensor::constant(l.recon.shape(), l.recon.values());
            const nn::Tensor d_loss = discriminator_loss(disc(batch.res), disc(fake));
            d_value = d_loss.item();
            require_finite(d_value, "train-posevae", step, "discriminator loss");
            disc.params().zero_grad();
            nn::backward(d_loss);
            opt_d.step(disc.params());
        }
        std::vector<double> row{l.total.item(), l.mse.item(), l.kl.item(), l.gan.item(), d_value};
        if (progress) progress(step, row);
        res.history.add(step, std::move(row));
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) checkpoint(step + 1);
    }
    res.eval_mse_final = posevae_eval_mse(vae, eval);
    checkpoint(std::max<long>(start, cfg.posevae_steps));
    return res;
}

std::unique_ptr<PoseVAE> load_posevae(const std::filesystem::path& dir) {
    const RunConfig cfg = load_train_config(dir);
    auto vae = std::make_unique<PoseVAE>(posevae_config(cfg), derive_seed(cfg.seed, kStreamInit));
    load_param_set(dir, "posevae", vae->params(), nullptr);
    return vae;
}

// ---- inference ---------------------------------------------------------------------------------

PoseSequence sample_poses(const PoseVAE& vae, const PoseCoeffs& rho0, std::span<const MelWindow> windows, int style,
                          int total_frames, std::uint64_t seed) {
    if (total_frames < 1) throw InvalidArgument("sample_poses: total_frames must be >= 1");
    if (windows.empty()) throw EmptyInput("sample_poses: no audio windows");
    const PoseVAEConfig& cfg = vae.config();
    const Eigen::VectorXd onehot = style_onehot(style, cfg.num_styles);
    constexpr int kStride = kPoseFrames - kCrossfadeFrames;

    nn::NoGradGuard guard;
    PoseSequence res = PoseSequence::Zero(total_frames, kPoseDim);
    const int last = static_cast<int>(windows.size()) - 1;
    for (int k = 0, start = 0;; ++k, start += kStride) {
        std::vector<const MelWindow*> wins;
        for (int t = 0; t < kPoseFrames; ++t) wins.push_back(&windows[static_cast<std::size_t>(std::min(start + t, last))]);
        PoseConds conds;
        conds.windows = stack_windows(std::span<const MelWindow* const>(wins));
        conds.style = nn::Tensor::constant({1, cfg.num_styles}, std::vector<double>(onehot.data(), onehot.data() + onehot.size()));
        conds.rho0 = nn::Tensor::constant({1, kPoseDim}, scaled_pose(rho0));
        Rng rng(derive_seed(derive_seed(seed, kStreamSample), static_cast<std::uint64_t>(k)));
        std::vector<double> z(static_cast<std::size_t>(cfg.latent_dim));
        for (auto& v : z) v = rng.normal();
        const nn::Tensor out =
            vae.decode(nn::Tensor::constant({1, cfg.latent_dim}, std::move(z)), conds, vae.audio_features(conds.windows));

        for (int t = 0; t < kPoseFrames && start + t < total_frames; ++t) {
            const double blend = (k > 0 && t < kCrossfadeFrames) ? (t + 1.0) / (kCrossfadeFrames + 1.0) : 1.0;
            for (int d = 0; d < kPoseDim; ++d) {
                const double v = out.at(static_cast<std::size_t>(t * kPoseDim + d)) * kPoseScale[static_cast<std::size_t>(d)];
                res(start + t, d) = (1.0 - blend) * res(start + t, d) + blend * v;
            }
        }
        if (start + kPoseFrames >= total_frames) break;
    }
    return recompose(rho0, res);
}

}  // namespace sadcoeff
