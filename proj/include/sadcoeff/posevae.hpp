#pragma once

// PoseVAE: conditional VAE over 32-frame head-pose residuals
//   d_rho_t = rho_t - rho_0
// conditioned on per-frame audio, the first pose rho_0 and a one-hot style.
// Encoder and decoder are two-layer MLPs; the decoder adds an affine style
// embedding to the latent. A 1D patch discriminator scores residual
// sequences (least-squares GAN).
//
// Network-side pose values are divided by kPoseScale (translations are in
// mm-like units, ten times larger than the angles). Losses are reported in
// raw units.

#include "sadcoeff/audio.hpp"
#include "sadcoeff/core3dmm.hpp"
#include "sadcoeff/expnet.hpp"
#include "sadcoeff/io.hpp"
#include "sadcoeff/metrics.hpp"
#include "sadcoeff/nn.hpp"
#include "sadcoeff/synthdata.hpp"
#include "sadcoeff/train.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <span>

namespace sadcoeff {

inline constexpr int kPoseFrames = 32;
inline constexpr int kPoseFlat = kPoseFrames * kPoseDim;  // 192, layout t * 6 + d
inline constexpr int kCrossfadeFrames = 4;
inline constexpr std::array<double, kPoseDim> kPoseScale{1.0, 1.0, 1.0, 10.0, 10.0, 10.0};

// ---- residuals ----------------------------------------------------------------------------

struct PoseResidual {
    PoseCoeffs rho0;
    PoseSequence res;  // row 0 is zero
};

PoseResidual pose_residual(const PoseSequence& seq);
PoseSequence recompose(const PoseCoeffs& rho0, const PoseSequence& res);

// Style one-hot of length num_styles; throws on an index outside [0, num_styles).
Eigen::VectorXd style_onehot(int style, int num_styles = kMaxStyles);

// ---- latent -------------------------------------------------------------------------------

struct LatentGaussian {
    nn::Tensor mu;       // [B, Dz]
    nn::Tensor log_var;  // [B, Dz], clamped to [-20, 20]
};

// z = mu + exp(log_var / 2) * noise
nn::Tensor reparameterize(const LatentGaussian& g, const nn::Tensor& noise);
// Sum over latent dims of the closed-form KL to N(0, I), mean over the batch.
nn::Tensor kl_to_standard_normal(const LatentGaussian& g);
double kl_to_standard_normal(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var);

// ---- model --------------------------------------------------------------------------------

struct PoseVAEConfig {
    std::array<int, 4> widths{32, 64, 128, 256};
    int latent_dim = 64;
    int hidden_dim = 256;
    int num_styles = kMaxStyles;
};

// Conditions for a batch of B sequences. Every tensor is constant.
struct PoseConds {
    nn::Tensor windows;  // [B * 32, 1, 16, 80], sequence-major
    nn::Tensor style;    // [B, num_styles]
    nn::Tensor rho0;     // [B, 6], scaled
};

class PoseVAE {
public:
    PoseVAE(const PoseVAEConfig& cfg, std::uint64_t seed);
    PoseVAE(const PoseVAE&) = delete;
    PoseVAE& operator=(const PoseVAE&) = delete;

    // [B * 32, 1, 16, 80] -> [B, 32 * C4]
    nn::Tensor audio_features(const nn::Tensor& windows) const;
    // res: scaled residuals [B, 192].
    LatentGaussian encode(const nn::Tensor& res, const PoseConds& conds, const nn::Tensor& audio) const;
    // z [B, Dz] -> scaled residuals [B, 192].
    nn::Tensor decode(const nn::Tensor& z, const PoseConds& conds, const nn::Tensor& audio) const;

    // Output layer of the decoder set to zero (every decode returns 0).
    void zero_output();

    const PoseVAEConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

private:
    PoseVAEConfig cfg_;
    nn::ParamSet params_;
    AudioEncoder audio_;
    nn::Linear enc1_, enc2_;
    nn::Linear style_emb_;
    nn::Linear dec1_, dec2_;
};

// Patch discriminator: three convolutions along time over the six pose
// channels; receptive field 18 frames. [B, 192] -> score map [B, 4].
class PoseDiscriminator {
public:
    explicit PoseDiscriminator(std::uint64_t seed);
    PoseDiscriminator(const PoseDiscriminator&) = delete;
    PoseDiscriminator& operator=(const PoseDiscriminator&) = delete;

    nn::Tensor operator()(const nn::Tensor& res) const;
    static constexpr int receptive_field() { return 18; }

    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

private:
    nn::ParamSet params_;
    nn::Conv2d c1_, c2_, c3_;
};

// ---- losses -------------------------------------------------------------------------------

struct PoseLossWeights {
    double mse = 1.0;
    double kl = 1.0;
    double gan = 0.7;
};

// Mean over batch, frames and the six dims of the squared raw-unit error
// between scaled residual tensors.
nn::Tensor pose_mse(const nn::Tensor& pred, const nn::Tensor& target);
// Least-squares GAN terms.
nn::Tensor generator_gan_loss(const nn::Tensor& fake_scores);
nn::Tensor discriminator_loss(const nn::Tensor& real_scores, const nn::Tensor& fake_scores);

double combine_pose_loss(const PoseLossWeights& w, double mse, double kl, double gan);

struct PoseBatch {
    int size = 0;
    PoseConds conds;
    nn::Tensor res;    // [B, 192] scaled
    nn::Tensor noise;  // [B, Dz]
};

PoseBatch sample_pose_batch(const Corpus& corpus, int size, int latent_dim, int num_styles, Rng& rng);

struct PoseLoss {
    nn::Tensor total;
    nn::Tensor mse;
    nn::Tensor kl;
    nn::Tensor gan;    // generator side; a zero constant when w.gan == 0
    nn::Tensor recon;  // scaled reconstruction [B, 192]
};

PoseLoss posevae_loss(const PoseVAE& vae, const PoseDiscriminator& disc, const PoseBatch& batch,
                      const PoseLossWeights& w);

// Reconstruction error with z = mu.
double posevae_eval_mse(const PoseVAE& vae, const PoseBatch& batch);

PoseVAEConfig posevae_config(const RunConfig& cfg);
PoseLossWeights pose_loss_weights(const RunConfig& cfg);
PoseBatch posevae_eval_batch(const Corpus& corpus, const RunConfig& cfg);

struct PoseTrainResult {
    std::unique_ptr<PoseVAE> vae;
    std::unique_ptr<PoseDiscriminator> disc;
    TrainHistory history;  // step,loss,loss_mse,loss_kl,loss_gan,loss_disc
    double eval_mse_initial = 0.0;
    double eval_mse_final = 0.0;
};

PoseTrainResult train_posevae(const Corpus& corpus, const RunConfig& cfg, const std::filesystem::path& out_dir,
                              bool resume = false, const ProgressFn& progress = {});

std::unique_ptr<PoseVAE> load_posevae(const std::filesystem::path& dir);

// ---- inference ----------------------------------------------------------------------------

// Long sequences in 32-frame chunks at stride 28. Every chunk is conditioned
// on the global rho0 and its own audio (edge-clamped); the 4 overlapping
// frames blend linearly from the earlier chunk into the later one. Chunk k
// draws z from N(0, I) seeded by (seed, k).
PoseSequence sample_poses(const PoseVAE& vae, const PoseCoeffs& rho0, std::span<const MelWindow> windows, int style,
                          int total_frames, std::uint64_t seed);

}  // namespace sadcoeff
