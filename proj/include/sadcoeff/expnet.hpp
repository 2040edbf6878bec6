#pragma once

// ExpNet: per-frame audio window -> expression coefficients, conditioned on
// the reference expression beta0 and a blink signal z in [0, 1].
//
//   beta_t = W [ enc(a_t) | beta0 | z_t ] + b
//
// The encoder is shared in architecture (not weights) with PoseVAE's audio
// path. Training losses:
//   L_exp = l_distill * L_distill + l_read * L_read + l_lks * L_lks
//   L_lks = l_eye * sum_t |R_t - z_t| + mean_{t, i not eye} |P_ti - P'_ti|^2

#include "sadcoeff/audio.hpp"
#include "sadcoeff/core3dmm.hpp"
#include "sadcoeff/io.hpp"
#include "sadcoeff/nn.hpp"
#include "sadcoeff/synthdata.hpp"
#include "sadcoeff/train.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace sadcoeff {

inline constexpr int kExpFrames = 5;

// ---- audio encoder ------------------------------------------------------------------------

struct EncoderStage {
    nn::Conv2d down;  // strided
    nn::Conv2d res1;
    nn::Conv2d res2;
};

// Four strided stages over the 16 x 80 window (16x80 -> 8x40 -> 4x20 -> 2x5
// -> 1x1), each followed by a residual block, then global average pooling.
struct AudioEncoder {
    std::array<EncoderStage, 4> stages;

    int out_dim() const { return stages[3].down.w.dim(0); }
    // x [N, 1, 16, 80] -> [N, out_dim]
    nn::Tensor operator()(const nn::Tensor& x) const;
};

AudioEncoder make_audio_encoder(nn::ParamSet& params, const std::string& prefix, const std::array<int, 4>& widths,
                                Rng& rng);

// Normalised windows stacked as [N, 1, 16, 80].
nn::Tensor stack_windows(std::span<const MelWindow> windows);
nn::Tensor stack_windows(std::span<const MelWindow* const> windows);

// ---- model ------------------------------------------------------------------------------------

struct ExpNetConfig {
    std::array<int, 4> widths{32, 64, 128, 256};
};

struct ExpLossWeights {
    double distill = 2.0;
    double read = 0.01;
    double lks = 0.01;
    double eye = 200.0;
};

class ExpNet {
public:
    ExpNet(const ExpNetConfig& cfg, std::uint64_t seed);
    ExpNet(const ExpNet&) = delete;
    ExpNet& operator=(const ExpNet&) = delete;

    // windows [N,1,16,80], beta0 [N,64], z [N,1] -> beta [N,64]. Row n only
    // depends on row n of each input.
    nn::Tensor forward(const nn::Tensor& windows, const nn::Tensor& beta0, const nn::Tensor& z) const;

    // Inference on one sequence; blink.size() must equal windows.size().
    std::vector<ExpressionVector> generate(std::span<const MelWindow> windows, const ExpressionVector& beta0,
                                           std::span<const double> blink) const;

    // Head weight and bias set to zero (output = 0 for every input).
    void zero_head();
    void set_head_bias(const ExpressionVector& bias);

    const ExpNetConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

private:
    ExpNetConfig cfg_;
    nn::ParamSet params_;
    AudioEncoder encoder_;
    nn::Linear head_;
};

// ---- losses -------------------------------------------------------------------------------

// Mean over frames and the 64 coefficients of the squared difference.
nn::Tensor loss_distill(const nn::Tensor& pred, const nn::Tensor& teacher);

// Flat 2D landmarks (pose zero) for each row of beta: [N,64] -> [N,136].
nn::Tensor landmarks_from_beta(const nn::Tensor& beta, const BlendshapeLandmarkModel& lmodel);
// Eye ratio per row: [N,136] -> [N,1].
nn::Tensor eye_ratio_rows(const nn::Tensor& lms);

struct LksParts {
    nn::Tensor eye;      // sum over frames of |R_t - z_t|, averaged over sequences
    nn::Tensor non_eye;  // mean squared distance over frames and non-eye landmarks
    nn::Tensor total;    // weights.eye * eye + non_eye
};
// Rows are `sequences` consecutive blocks of equal length.
LksParts loss_lks(const nn::Tensor& pred_lms, const nn::Tensor& teacher_lms, const nn::Tensor& blink, int sequences,
                  const ExpLossWeights& weights);

// Reading-oracle logits from flat landmarks: [N,136] -> [N,28].
nn::Tensor reading_logits(const nn::Tensor& lms, const ReadingOracle& reader);
// Mean over frames of soft-label cross-entropy.
nn::Tensor loss_read(const nn::Tensor& pred_logits, const nn::Tensor& target_logits);

double combine_exp_loss(const ExpLossWeights& w, double distill, double read, double lks);
nn::Tensor combine_exp_loss(const ExpLossWeights& w, const nn::Tensor& distill, const nn::Tensor& read,
                            const nn::Tensor& lks);

// Sequence-level convenience wrappers on plain values (one sequence).
double loss_distill(std::span<const ExpressionVector> pred, std::span<const ExpressionVector> teacher);
double loss_lks(std::span<const Landmarks2D> pred, std::span<const Landmarks2D> teacher, std::span<const double> blink,
                const ExpLossWeights& weights);
double loss_read(const Eigen::MatrixXd& pred_logits, const Eigen::MatrixXd& target_logits);

// ---- batches and training -------------------------------------------------------------------

struct ExpBatch {
    int sequences = 0;
    int frames = 0;
    nn::Tensor windows;  // [N,1,16,80]
    nn::Tensor beta0;    // [N,64]
    nn::Tensor blink;    // [N,1]
    nn::Tensor target;   // [N,64] teacher lip block + beta0 elsewhere
};

ExpBatch sample_exp_batch(const Corpus& corpus, int sequences, int frames, Rng& rng);

struct ExpLoss {
    nn::Tensor total;
    nn::Tensor distill;
    nn::Tensor read;
    nn::Tensor lks;
};

ExpLoss expnet_loss(const ExpNet& net, const ExpBatch& batch, const CorpusAssets& assets, const ExpLossWeights& w);

ExpNetConfig expnet_config(const RunConfig& cfg);
ExpLossWeights exp_loss_weights(const RunConfig& cfg);

struct ExpTrainResult {
    std::unique_ptr<ExpNet> net;
    TrainHistory history;  // step,loss,loss_distill,loss_read,loss_lks
    double eval_distill_initial = 0.0;
    double eval_distill_final = 0.0;
};

// Trains from scratch, or resumes from `out_dir` when `resume` is set. Writes
// the checkpoint and history.csv to `out_dir` (if non-empty).
ExpTrainResult train_expnet(const Corpus& corpus, const RunConfig& cfg, const std::filesystem::path& out_dir,
                            bool resume = false, const ProgressFn& progress = {});

// Fixed evaluation batch used to measure convergence.
ExpBatch expnet_eval_batch(const Corpus& corpus, const RunConfig& cfg);

std::unique_ptr<ExpNet> load_expnet(const std::filesystem::path& dir);

}  // namespace sadcoeff
