#pragma once

// Seeded synthetic assets: blendshape and landmark models, the lip-teacher,
// reading and keypoint oracles, and the multi-style audio/pose corpus.

#include "sadcoeff/audio.hpp"
#include "sadcoeff/core3dmm.hpp"
#include "sadcoeff/io.hpp"
#include "sadcoeff/kpmapper.hpp"
#include "sadcoeff/metrics.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace sadcoeff {

inline constexpr int kMaxStyles = 46;
inline constexpr int kNumChars = 28;  // 26 letters, space, blank

// Fixed affine normalisation of log-mel values applied before any model or
// oracle sees a window.
inline constexpr double kMelNormMean = -1.6;
inline constexpr double kMelNormScale = 1.2;
MelWindowData normalize_window(const MelWindow& w);

// Neutral lid gap and eye width of the generated landmark model.
inline constexpr double kEyeWidth = 28.0;
inline constexpr double kNeutralLidGap = kEyeWidth / 4.0;

BlendshapeModel gen_blendshape_model(std::uint64_t seed, int vertices = 300);
BlendshapeLandmarkModel gen_landmark_model(std::uint64_t seed);

// Eye coefficient value (all four eye coefficients equal) whose eye ratio
// on the generated model is z.
double eye_coefficient_for_ratio(double z);

// Lip teacher output scale: pre-activation std and clamp bound.
inline constexpr double kLipStd = 1.2;
inline constexpr double kLipClamp = 3.0;

struct LipTeacherOracle {
    Eigen::MatrixXd weight;  // 16 x 1280 over the normalised window, row-major cells
    Eigen::VectorXd bias;    // 16

    ExpressionVector apply(const MelWindow& w) const;
    std::vector<ExpressionVector> teacher_beta(std::span<const MelWindow> windows) const;
};

LipTeacherOracle gen_lip_teacher(std::uint64_t seed, double fps = 25.0);

struct ReadingOracle {
    Eigen::MatrixXd weight;  // 28 x 40
    Eigen::VectorXd bias;    // 28
    Eigen::VectorXd center;  // 40, neutral mouth coordinates
    double scale = 1.0;      // coordinate units per feature unit

    Eigen::VectorXd logits(const Landmarks2D& lms) const;
    std::vector<double> to_flat() const;
    static ReadingOracle from_flat(std::span<const double> flat);
};

ReadingOracle gen_reading_oracle(std::uint64_t seed, const BlendshapeLandmarkModel& lmodel);

struct KeypointOracle {
    Eigen::MatrixXd canonical;  // K x 3, zero centroid
    Eigen::MatrixXd weight;     // (6 + 3K) x 350 over mapper_input
    Eigen::VectorXd bias;       // 6 + 3K

    int num_keypoints() const { return static_cast<int>(canonical.rows()); }
    KeypointMotion motion(const CoeffWindow& w) const;
    Eigen::MatrixXd keypoints(const CoeffWindow& w) const;
    std::vector<double> to_flat() const;
    static KeypointOracle from_flat(std::span<const double> flat);
};

inline constexpr double kOracleRotLimit = 0.5;
inline constexpr double kOracleTransLimit = 0.2;
inline constexpr double kOracleDeltaLimit = 0.05;

// Row scales are calibrated on `calibration` so that pre-activations have a
// fixed spread over corpus-like inputs.
KeypointOracle gen_keypoint_oracle(std::uint64_t seed, int num_keypoints, std::span<const CoeffWindow> calibration);

// ---- corpus -----------------------------------------------------------------------------

struct StyleProfile {
    Eigen::Matrix<double, kPoseDim, 1> amplitude;  // per pose dimension
    double base_frequency = 0.5;                   // Hz
    ExpressionVector identity_expression;          // non-lip, non-eye only
};

StyleProfile style_profile(std::uint64_t seed, int style);
PoseSequence gen_pose_sequence(std::uint64_t seed, int style, int frames, double fps);
Waveform gen_audio_for_clip(std::uint64_t seed, int frames, double fps);
// Reference expression: the style identity expression plus a small per-clip
// offset; lip and eye coefficients are zero.
ExpressionVector gen_reference_expression(std::uint64_t seed, int style);

struct SynthClip {
    std::string id;
    int style = 0;
    Waveform audio;
    std::vector<MelWindow> windows;
    PoseSequence poses;
    std::vector<ExpressionVector> teacher;  // lip-only
    ExpressionVector beta0;
    PoseCoeffs rho0;

    int frames() const { return static_cast<int>(poses.rows()); }
    // Distillation target: teacher lip block plus beta0 elsewhere.
    ExpressionVector target(int t) const;
    MotionSequence motion() const;  // target expression with the clip poses
};

struct CorpusAssets {
    BlendshapeLandmarkModel landmarks;
    LipTeacherOracle lip_teacher;
    ReadingOracle reader;
    KeypointOracle keypoints;
};

CorpusAssets gen_assets(std::uint64_t seed, double fps);

// Clip `index` of style `style`; every random stream derives from
// (seed, style, index).
SynthClip gen_clip(std::uint64_t seed, int style, int index, int frames, double fps, const LipTeacherOracle& teacher);

struct Corpus {
    CorpusAssets assets;
    std::vector<SynthClip> clips;
    std::uint64_t seed = 0;
    double fps = 25.0;
    int num_styles = 0;
};

// Generates every clip (in parallel up to worker_count()) and writes the
// corpus directory. Returns the number of clips.
int write_corpus(const RunConfig& cfg, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Worker cap from SADCOEFF_THREADS (default: hardware concurrency, min 1).
int worker_count();

}  // namespace sadcoeff
