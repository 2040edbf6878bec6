#include "sadcoeff/synthdata.hpp"

#include "sadcoeff/errors.hpp"
#include "sadcoeff/nn.hpp"
#include "sadcoeff/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace sadcoeff {

namespace {

constexpr double kPi = std::numbers::pi;

// Stream ids for derive_seed.
constexpr std::uint64_t kStreamLandmarks = 1;
constexpr std::uint64_t kStreamLipTeacher = 2;
constexpr std::uint64_t kStreamReader = 3;
constexpr std::uint64_t kStreamKeypoints = 4;
constexpr std::uint64_t kStreamBlendshape = 5;
constexpr std::uint64_t kStreamStyle = 10000;
constexpr std::uint64_t kStreamClip = 20000;
constexpr int kCalibrationIndex = 1000000;

std::uint64_t clip_seed(std::uint64_t seed, int style, int index) {
    return derive_seed(derive_seed(seed, kStreamClip + static_cast<std::uint64_t>(style)),
                       static_cast<std::uint64_t>(index));
}

double halton(int index, int base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= base;
        r += f * (index % base);
        index /= base;
    }
    return r;
}

void round_matrix(Eigen::MatrixXd& m) {
    nn::round_to_f32(std::span<double>(m.data(), static_cast<std::size_t>(m.size())));
}

void round_vector(Eigen::VectorXd& v) {
    nn::round_to_f32(std::span<double>(v.data(), static_cast<std::size_t>(v.size())));
}

Eigen::MatrixXd mean_face() {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(kNumLandmarks, 3);
    for (int i = 0; i <= 16; ++i) {
        const double a = i * kPi / 16.0;
        m.row(i) << -70.0 * std::cos(a), -5.0 - 75.0 * std::sin(a), 30.0 * std::sin(a) - 30.0;
    }
    for (int j = 0; j < 5; ++j) {
        const double x = 15.0 + 11.25 * j;
        const double arch = 4.0 * std::sin(kPi * j / 4.0);
        m.row(21 - j) << -x, 28.0 + arch, 8.0;
        m.row(22 + j) << x, 28.0 + arch, 8.0;
    }
    for (int j = 0; j < 4; ++j) m.row(27 + j) << 0.0, 15.0 - 10.0 * j, 10.0 + 5.0 * j;
    for (int j = 0; j < 5; ++j) m.row(31 + j) << -12.0 + 6.0 * j, -22.0 - (j == 2 ? 2.0 : 0.0), 18.0;

    const double h = kNeutralLidGap / 2.0;
    const double y0 = 10.0;
    // Left eye: corners 36/39, upper lid 37/38, lower lid 41/40.
    m.row(36) << -45.0, y0, 0.0;
    m.row(37) << -37.0, y0 + h, 1.0;
    m.row(38) << -23.0, y0 + h, 1.0;
    m.row(39) << -45.0 + kEyeWidth, y0, 0.0;
    m.row(40) << -23.0, y0 - h, 1.0;
    m.row(41) << -37.0, y0 - h, 1.0;
    for (int j = 0; j < 6; ++j) {
        // Right eye mirrors the left: 42<->39, 43<->38, 44<->37, 45<->36, 46<->41, 47<->40.
        static constexpr int kMirror[6] = {39, 38, 37, 36, 41, 40};
        m.row(42 + j) << -m(kMirror[j], 0), m(kMirror[j], 1), m(kMirror[j], 2);
    }
    for (int j = 0; j < 12; ++j) {
        const double a = kPi - j * 2.0 * kPi / 12.0;
        m.row(48 + j) << 25.0 * std::cos(a), -45.0 + 10.0 * std::sin(a), 12.0;
    }
    for (int j = 0; j < 8; ++j) {
        const double a = kPi - j * 2.0 * kPi / 8.0;
        m.row(60 + j) << 15.0 * std::cos(a), -45.0 + 4.0 * std::sin(a), 11.0;
    }
    return m;
}

}  // namespace

MelWindowData normalize_window(const MelWindow& w) {
    return ((w.window.array() - kMelNormMean) / kMelNormScale).matrix();
}

BlendshapeModel gen_blendshape_model(std::uint64_t seed, int vertices) {
    if (vertices < kNumLandmarks) throw InvalidArgument("gen_blendshape_model: need at least 68 vertices");
    Rng rng(derive_seed(seed, kStreamBlendshape));
    Eigen::MatrixXd mean(vertices, 3);
    for (int v = 0; v < vertices; ++v)
        for (int a = 0; a < 3; ++a) mean(v, a) = rng.normal(0.0, 50.0);
    auto basis = [&](int cols) {
        Eigen::MatrixXd b(3 * vertices, cols);
        for (int c = 0; c < cols; ++c) {
            for (int r = 0; r < 3 * vertices; ++r) b(r, c) = rng.normal();
            b.col(c) /= b.col(c).norm();
        }
        return b;
    };
    Eigen::MatrixXd id = basis(kIdentityDim);
    Eigen::MatrixXd exp = basis(kExpressionDim);
    return BlendshapeModel(std::move(mean), std::move(id), std::move(exp));
}

BlendshapeLandmarkModel gen_landmark_model(std::uint64_t seed) {
    Rng rng(derive_seed(seed, kStreamLandmarks));
    Eigen::MatrixXd mean = mean_face();
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(3 * kNumLandmarks, kExpressionDim);

    for (int k = kLipBegin; k < kLipBegin + kLipCount; ++k) {
        for (int i = kMouthLandmarkBegin; i < kNumLandmarks; ++i) {
            basis(3 * i + 0, k) = rng.normal(0.0, 0.5);
            basis(3 * i + 1, k) = rng.normal(0.0, 1.25);
            basis(3 * i + 2, k) = rng.normal(0.0, 0.25);
        }
    }
    // Eye block. Left lid gap = g0 (1 + 0.5 b16 + 0.5 b18), right uses b17/b19;
    // 16/17 open both lids equally, 18/19 mostly move the upper lid.
    const double g0 = kNeutralLidGap;
    constexpr int kUpperL[2] = {37, 38}, kLowerL[2] = {40, 41};
    constexpr int kUpperR[2] = {43, 44}, kLowerR[2] = {46, 47};
    for (int side = 0; side < 2; ++side) {
        const int* up = side == 0 ? kUpperL : kUpperR;
        const int* lo = side == 0 ? kLowerL : kLowerR;
        const int sym = kEyeBegin + side;
        const int upper_dominant = kEyeBegin + 2 + side;
        for (int j = 0; j < 2; ++j) {
            basis(3 * up[j] + 1, sym) = 0.25 * g0;
            basis(3 * lo[j] + 1, sym) = -0.25 * g0;
            basis(3 * up[j] + 1, upper_dominant) = 0.4 * g0;
            basis(3 * lo[j] + 1, upper_dominant) = -0.1 * g0;
        }
    }
    for (int k = kEyeBegin + kEyeCount; k < kExpressionDim; ++k) {
        for (int i = 0; i < kNumLandmarks; ++i) {
            if (is_eye_landmark(i)) continue;
            for (int a = 0; a < 3; ++a) basis(3 * i + a, k) = rng.normal(0.0, 0.8);
        }
    }
    round_matrix(mean);
    round_matrix(basis);
    return BlendshapeLandmarkModel(std::move(mean), std::move(basis));
}

double eye_coefficient_for_ratio(double z) { return 2.0 * (z - 0.5); }

// ---- lip teacher --------------------------------------------------------------------------

ExpressionVector LipTeacherOracle::apply(const MelWindow& w) const {
    const MelWindowData x = normalize_window(w);
    const Eigen::Map<const Eigen::VectorXd> flat(x.data(), kWindowFrames * kMelBands);
    const Eigen::VectorXd pre = weight * flat + bias;
    ExpressionVector beta = ExpressionVector::Zero();
    for (int k = 0; k < kLipCount; ++k) beta[kLipBegin + k] = std::clamp(pre[k], -kLipClamp, kLipClamp);
    return beta;
}

std::vector<ExpressionVector> LipTeacherOracle::teacher_beta(std::span<const MelWindow> windows) const {
    std::vector<ExpressionVector> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(apply(w));
    return out;
}

LipTeacherOracle gen_lip_teacher(std::uint64_t seed, double fps) {
    Rng rng(derive_seed(seed, kStreamLipTeacher));
    LipTeacherOracle o;
    o.weight.resize(kLipCount, kWindowFrames * kMelBands);
    o.bias.resize(kLipCount);
    // Separable smooth weights: a few low-frequency cosines along time and
    // along mel bands.
    for (int k = 0; k < kLipCount; ++k) {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(kWindowFrames);
        Eigen::VectorXd v = Eigen::VectorXd::Zero(kMelBands);
        for (int m = 0; m < 3; ++m) {
            const double a = rng.normal() / (1.0 + m);
            for (int r = 0; r < kWindowFrames; ++r) u[r] += a * std::cos(kPi * m * (r + 0.5) / kWindowFrames);
        }
        for (int m = 0; m < 5; ++m) {
            const double a = rng.normal() / (1.0 + 0.5 * m);
            for (int b = 0; b < kMelBands; ++b) v[b] += a * std::cos(kPi * m * (b + 0.5) / kMelBands);
        }
        for (int r = 0; r < kWindowFrames; ++r)
            for (int b = 0; b < kMelBands; ++b) o.weight(k, r * kMelBands + b) = u[r] * v[b];
    }

    // Calibrate gain and offset on a few synthetic clips so that each lip
    // coefficient has std kLipStd before clamping.
    std::vector<Eigen::VectorXd> pre;
    for (int c = 0; c < 6; ++c) {
        const Waveform w = gen_audio_for_clip(derive_seed(seed, kStreamLipTeacher * 1000 + c), 100, fps);
        const auto windows = frame_windows(mel_spectrogram(w), 100, fps);
        for (const auto& win : windows) {
            const MelWindowData x = normalize_window(win);
            pre.push_back(o.weight * Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()));
        }
    }
    const double n = static_cast<double>(pre.size());
    for (int k = 0; k < kLipCount; ++k) {
        double mean = 0.0, sq = 0.0;
        for (const auto& p : pre) mean += p[k];
        mean /= n;
        for (const auto& p : pre) sq += (p[k] - mean) * (p[k] - mean);
        const double sd = std::sqrt(sq / n);
        const double gain = sd > 0.0 ? kLipStd / sd : 1.0;
        o.weight.row(k) *= gain;
        o.bias[k] = -mean * gain + rng.normal(0.0, 0.1);
    }
    round_matrix(o.weight);
    round_vector(o.bias);
    return o;
}

// ---- reading oracle ---------------------------------------------------------------------------

Eigen::VectorXd ReadingOracle::logits(const Landmarks2D& lms) const {
    Eigen::VectorXd f(2 * kMouthLandmarkCount);
    for (int j = 0; j < kMouthLandmarkCount; ++j) {
        for (int a = 0; a < 2; ++a) f[2 * j + a] = (lms.points(kMouthLandmarkBegin + j, a) - center[2 * j + a]) / scale;
    }
    return weight * f + bias;
}

std::vector<double> ReadingOracle::to_flat() const {
    std::vector<double> flat;
    for (int r = 0; r < weight.rows(); ++r)
        for (int c = 0; c < weight.cols(); ++c) flat.push_back(weight(r, c));
    flat.insert(flat.end(), bias.data(), bias.data() + bias.size());
    flat.insert(flat.end(), center.data(), center.data() + center.size());
    flat.push_back(scale);
    return flat;
}

ReadingOracle ReadingOracle::from_flat(std::span<const double> flat) {
    constexpr int kIn = 2 * kMouthLandmarkCount;
    if (flat.size() != static_cast<std::size_t>(kNumChars * kIn + kNumChars + kIn + 1)) {
        throw FormatError("reading oracle: unexpected parameter count");
    }
    ReadingOracle o;
    o.weight.resize(kNumChars, kIn);
    std::size_t p = 0;
    for (int r = 0; r < kNumChars; ++r)
        for (int c = 0; c < kIn; ++c) o.weight(r, c) = flat[p++];
    o.bias.resize(kNumChars);
    for (int r = 0; r < kNumChars; ++r) o.bias[r] = flat[p++];
    o.center.resize(kIn);
    for (int c = 0; c < kIn; ++c) o.center[c] = flat[p++];
    o.scale = flat[p];
    return o;
}

ReadingOracle gen_reading_oracle(std::uint64_t seed, const BlendshapeLandmarkModel& lmodel) {
    Rng rng(derive_seed(seed, kStreamReader));
    constexpr int kIn = 2 * kMouthLandmarkCount;
    ReadingOracle o;
    o.weight.resize(kNumChars, kIn);
    for (int r = 0; r < kNumChars; ++r)
        for (int c = 0; c < kIn; ++c) o.weight(r, c) = rng.normal(0.0, 3.0 / std::sqrt(kIn));
    o.bias.resize(kNumChars);
    for (int r = 0; r < kNumChars; ++r) o.bias[r] = rng.normal(0.0, 0.5);
    o.center = lmodel.mean_2d().segment(2 * kMouthLandmarkBegin, kIn);
    o.scale = 3.0;
    round_matrix(o.weight);
    round_vector(o.bias);
    round_vector(o.center);
    return o;
}

// ---- keypoint oracle --------------------------------------------------------------------------

KeypointMotion KeypointOracle::motion(const CoeffWindow& w) const {
    const auto in = mapper_input(w);
    const Eigen::VectorXd h =
        (weight * Eigen::Map<const Eigen::VectorXd>(in.data(), static_cast<Eigen::Index>(in.size())) + bias)
            .array()
            .tanh()
            .matrix();
    const int k = num_keypoints();
    KeypointMotion m = KeypointMotion::zero(k);
    for (int i = 0; i < 3; ++i) {
        m.rot[i] = kOracleRotLimit * h[i];
        m.tr[i] = kOracleTransLimit * h[3 + i];
    }
    for (int p = 0; p < k; ++p)
        for (int a = 0; a < 3; ++a) m.delta(p, a) = kOracleDeltaLimit * h[6 + 3 * p + a];
    return m;
}

Eigen::MatrixXd KeypointOracle::keypoints(const CoeffWindow& w) const { return transform_keypoints(canonical, motion(w)); }

std::vector<double> KeypointOracle::to_flat() const {
    std::vector<double> flat;
    flat.push_back(static_cast<double>(num_keypoints()));
    for (int r = 0; r < canonical.rows(); ++r)
        for (int c = 0; c < 3; ++c) flat.push_back(canonical(r, c));
    for (int r = 0; r < weight.rows(); ++r)
        for (int c = 0; c < weight.cols(); ++c) flat.push_back(weight(r, c));
    flat.insert(flat.end(), bias.data(), bias.data() + bias.size());
    return flat;
}

KeypointOracle KeypointOracle::from_flat(std::span<const double> flat) {
    if (flat.empty()) throw FormatError("keypoint oracle: empty parameter vector");
    const int k = static_cast<int>(flat[0]);
    const int out = 6 + 3 * k;
    const int in = kMotionDim * kCoeffWindowFrames;
    if (k <= 0 || flat.size() != static_cast<std::size_t>(1 + 3 * k + out * in + out)) {
        throw FormatError("keypoint oracle: unexpected parameter count");
    }
    KeypointOracle o;
    std::size_t p = 1;
    o.canonical.resize(k, 3);
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < 3; ++c) o.canonical(r, c) = flat[p++];
    o.weight.resize(out, in);
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) o.weight(r, c) = flat[p++];
    o.bias.resize(out);
    for (int r = 0; r < out; ++r) o.bias[r] = flat[p++];
    return o;
}

KeypointOracle gen_keypoint_oracle(std::uint64_t seed, int num_keypoints, std::span<const CoeffWindow> calibration) {
    if (num_keypoints <= 0) throw InvalidArgument("gen_keypoint_oracle: num_keypoints must be positive");
    if (calibration.size() < 2) throw InvalidArgument("gen_keypoint_oracle: need calibration windows");
    Rng rng(derive_seed(seed, kStreamKeypoints));
    KeypointOracle o;
    o.canonical.resize(num_keypoints, 3);
    for (int r = 0; r < num_keypoints; ++r)
        for (int c = 0; c < 3; ++c) o.canonical(r, c) = rng.uniform(-0.8, 0.8);
    o.canonical.rowwise() -= o.canonical.colwise().mean();

    const int out = 6 + 3 * num_keypoints;
    const int in = kMotionDim * kCoeffWindowFrames;
    o.weight.resize(out, in);
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) o.weight(r, c) = rng.normal();
    o.bias = Eigen::VectorXd::Zero(out);

    // Scale each row so its pre-activation has standard deviation 0.8 over
    // the calibration windows, centred near zero.
    Eigen::MatrixXd x(in, static_cast<Eigen::Index>(calibration.size()));
    for (std::size_t i = 0; i < calibration.size(); ++i) {
        const auto v = mapper_input(calibration[i]);
        x.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(v.data(), in);
    }
    const Eigen::MatrixXd pre = o.weight * x;
    for (int r = 0; r < out; ++r) {
        const double mean = pre.row(r).mean();
        const double sd = std::sqrt((pre.row(r).array() - mean).square().mean());
        const double gain = sd > 0.0 ? 0.8 / sd : 1.0;
        o.weight.row(r) *= gain;
        o.bias[r] = -mean * gain + rng.normal(0.0, 0.3);
    }
    round_matrix(o.canonical);
    round_matrix(o.weight);
    round_vector(o.bias);
    return o;
}

// ---- corpus ---------------------------------------------------------------------------------

StyleProfile style_profile(std::uint64_t seed, int style) {
    if (style < 0 || style >= kMaxStyles) throw InvalidArgument("style index out of range");
    static constexpr int kBases[kPoseDim] = {2, 3, 5, 7, 11, 13};
    StyleProfile p;
    for (int d = 0; d < kPoseDim; ++d) {
        const double h = halton(style + 1, kBases[d]);
        p.amplitude[d] = d < 3 ? 0.04 + 0.26 * h : 4.0 + 24.0 * h;
    }
    p.base_frequency = 0.25 + 0.9 * halton(style + 1, 17);
    Rng rng(derive_seed(seed, kStreamStyle + static_cast<std::uint64_t>(style)));
    p.identity_expression = ExpressionVector::Zero();
    for (int k = kEyeBegin + kEyeCount; k < kExpressionDim; ++k) p.identity_expression[k] = rng.normal(0.0, 0.3);
    return p;
}

PoseSequence gen_pose_sequence(std::uint64_t seed, int style, int frames, double fps) {
    if (frames < 1) throw InvalidArgument("gen_pose_sequence: frames must be positive");
    const StyleProfile prof = style_profile(seed, style);
    Rng rng(derive_seed(seed, 2));
    static constexpr double kHarmonic[3] = {1.0, 1.9, 3.1};
    static constexpr double kWeight[3] = {0.7, 0.35, 0.15};
    PoseSequence out(frames, kPoseDim);
    for (int d = 0; d < kPoseDim; ++d) {
        const double amp = prof.amplitude[d];
        double freq[3], a[3], phase[3];
        for (int s = 0; s < 3; ++s) {
            freq[s] = prof.base_frequency * kHarmonic[s] * rng.uniform(0.9, 1.1);
            a[s] = amp * kWeight[s] * rng.uniform(0.85, 1.15);
            phase[s] = rng.uniform(0.0, 2.0 * kPi);
        }
        const double offset = d < 3 ? rng.uniform(-0.1, 0.1) : rng.uniform(-5.0, 5.0);
        // Exponentially smoothed white noise, rescaled to 0.1 * amplitude.
        constexpr double kAlpha = 0.15;
        const double noise_gain = 0.1 * amp * std::sqrt((2.0 - kAlpha) / kAlpha);
        double ema = 0.0;
        for (int t = 0; t < frames; ++t) {
            ema = (1.0 - kAlpha) * ema + kAlpha * rng.normal();
            const double time = t / fps;
            double v = offset + noise_gain * ema;
            for (int s = 0; s < 3; ++s) v += a[s] * std::sin(2.0 * kPi * freq[s] * time + phase[s]);
            if (d < 3) v = std::clamp(v, -kPi / 2.0, kPi / 2.0);
            out(t, d) = v;
        }
    }
    return out;
}

Waveform gen_audio_for_clip(std::uint64_t seed, int frames, double fps) {
    if (frames < 1) throw InvalidArgument("gen_audio_for_clip: frames must be positive");
    if (!(fps > 0.0)) throw InvalidArgument("gen_audio_for_clip: fps must be positive");
    Rng rng(derive_seed(seed, 1));
    const long n = std::lround(frames / fps * kSampleRate);
    Waveform w;
    w.sample_rate = kSampleRate;
    w.samples.assign(static_cast<std::size_t>(n), 0.0);
    for (auto& s : w.samples) s = 0.002 * rng.normal();

    long t = 0;
    while (t < n) {
        t += static_cast<long>(rng.uniform(0.02, 0.12) * kSampleRate);
        const long len = static_cast<long>(rng.uniform(0.08, 0.3) * kSampleRate);
        const double f0 = rng.uniform(100.0, 400.0);
        const double am_rate = rng.uniform(3.0, 8.0);
        const double level = rng.uniform(0.05, 0.6);
        const double tilt = rng.uniform(0.3, 0.9);
        const double formant = rng.uniform(500.0, 3000.0);
        for (long i = 0; i < len && t + i < n; ++i) {
            const double time = static_cast<double>(i) / kSampleRate;
            const double env = std::sin(kPi * static_cast<double>(i) / static_cast<double>(len));
            const double am = 1.0 - 0.5 * (0.5 - 0.5 * std::cos(2.0 * kPi * am_rate * time));
            double v = 0.0;
            double h_amp = 1.0;
            for (int h = 1; h <= 6; ++h) {
                const double f = f0 * h;
                const double boost = 1.0 + 2.0 * std::exp(-std::pow((f - formant) / 400.0, 2.0));
                v += h_amp * boost * std::sin(2.0 * kPi * f * time);
                h_amp *= tilt;
            }
            w.samples[static_cast<std::size_t>(t + i)] += level * env * am * v / 4.0;
        }
        t += len;
    }
    double peak = 0.0;
    for (double s : w.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.95) {
        for (double& s : w.samples) s *= 0.95 / peak;
    }
    // Stored as float32 on disk; keep the in-memory copy identical.
    nn::round_to_f32(w.samples);
    return w;
}

ExpressionVector gen_reference_expression(std::uint64_t seed, int style) {
    ExpressionVector b = style_profile(seed, style).identity_expression;
    return b;
}

ExpressionVector SynthClip::target(int t) const {
    ExpressionVector b = beta0;
    b.segment(kLipBegin, kLipCount) = teacher[static_cast<std::size_t>(t)].segment(kLipBegin, kLipCount);
    return b;
}

MotionSequence SynthClip::motion() const {
    MotionSequence m(frames(), kMotionDim);
    for (int t = 0; t < frames(); ++t) {
        m.row(t).head(kExpressionDim) = target(t).transpose();
        m.row(t).tail(kPoseDim) = poses.row(t);
    }
    return m;
}

namespace {

ExpressionVector clip_reference(std::uint64_t corpus_seed, std::uint64_t cseed, int style) {
    ExpressionVector b = gen_reference_expression(corpus_seed, style);
    Rng rng(derive_seed(cseed, 3));
    for (int k = kEyeBegin + kEyeCount; k < kExpressionDim; ++k) b[k] += rng.normal(0.0, 0.05);
    for (int k = 0; k < kExpressionDim; ++k) b[k] = nn::to_f32(b[k]);
    return b;
}

}  // namespace

SynthClip gen_clip(std::uint64_t seed, int style, int index, int frames, double fps, const LipTeacherOracle& teacher) {
    const std::uint64_t cs = clip_seed(seed, style, index);
    SynthClip c;
    char id[32];
    std::snprintf(id, sizeof id, "s%02d_%04d", style, index);
    c.id = id;
    c.style = style;
    c.audio = gen_audio_for_clip(cs, frames, fps);
    c.windows = frame_windows(mel_spectrogram(c.audio), frames, fps);
    c.poses = gen_pose_sequence(cs, style, frames, fps);
    for (Eigen::Index i = 0; i < c.poses.size(); ++i) c.poses.data()[i] = nn::to_f32(c.poses.data()[i]);
    c.teacher = teacher.teacher_beta(c.windows);
    for (auto& b : c.teacher)
        for (int k = 0; k < kExpressionDim; ++k) b[k] = nn::to_f32(b[k]);
    c.beta0 = clip_reference(seed, cs, style);
    const auto row0 = c.poses.row(0);
    c.rho0.rot = row0.head<3>().transpose();
    c.rho0.trans = row0.tail<3>().transpose();
    return c;
}

CorpusAssets gen_assets(std::uint64_t seed, double fps) {
    BlendshapeLandmarkModel lm = gen_landmark_model(seed);
    LipTeacherOracle teacher = gen_lip_teacher(seed, fps);
    ReadingOracle reader = gen_reading_oracle(seed, lm);
    std::vector<CoeffWindow> calib;
    for (int i = 0; i < 8; ++i) {
        const SynthClip c = gen_clip(seed, (i * 7) % kMaxStyles, kCalibrationIndex + i, 100, fps, teacher);
        const MotionSequence m = c.motion();
        for (int t = 0; t < c.frames(); t += 2) calib.push_back(coeff_window(m, t));
    }
    KeypointOracle kp = gen_keypoint_oracle(seed, kDefaultKeypoints, calib);
    return CorpusAssets{std::move(lm), std::move(teacher), std::move(reader), std::move(kp)};
}

int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* env = std::getenv("SADCOEFF_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return std::max(1, n);
}

namespace {

CoefMatrix row_coef(std::span<const double> values) {
    return CoefMatrix::from_values(1, static_cast<std::uint32_t>(values.size()), values);
}

std::vector<double> lip_teacher_flat(const LipTeacherOracle& o) {
    std::vector<double> flat(o.weight.size() + o.bias.size());
    std::size_t p = 0;
    for (int r = 0; r < o.weight.rows(); ++r)
        for (int c = 0; c < o.weight.cols(); ++c) flat[p++] = o.weight(r, c);
    for (int r = 0; r < o.bias.size(); ++r) flat[p++] = o.bias[r];
    return flat;
}

LipTeacherOracle lip_teacher_from_flat(std::span<const double> flat) {
    constexpr int kIn = kWindowFrames * kMelBands;
    if (flat.size() != static_cast<std::size_t>(kLipCount * kIn + kLipCount)) {
        throw FormatError("lip teacher: unexpected parameter count");
    }
    LipTeacherOracle o;
    o.weight.resize(kLipCount, kIn);
    o.bias.resize(kLipCount);
    std::size_t p = 0;
    for (int r = 0; r < kLipCount; ++r)
        for (int c = 0; c < kIn; ++c) o.weight(r, c) = flat[p++];
    for (int r = 0; r < kLipCount; ++r) o.bias[r] = flat[p++];
    return o;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

template <typename Fn>
void parallel_for(int n, Fn fn) {
    const int workers = std::min(worker_count(), std::max(1, n));
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

int write_corpus(const RunConfig& cfg, const std::filesystem::path& dir) {
    validate_config(cfg);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw std::runtime_error("cannot create corpus directory " + dir.string());

    const CorpusAssets assets = gen_assets(cfg.seed, cfg.fps);
    write_coef(dir / "landmark_model.coef", row_coef(assets.landmarks.to_flat()));
    write_coef(dir / "lip_teacher.coef", row_coef(lip_teacher_flat(assets.lip_teacher)));
    write_coef(dir / "reading_oracle.coef", row_coef(assets.reader.to_flat()));
    write_coef(dir / "keypoint_oracle.coef", row_coef(assets.keypoints.to_flat()));

    const int total = cfg.num_styles * cfg.clips_per_style;
    std::vector<std::string> rows(static_cast<std::size_t>(total));
    parallel_for(total, [&](int i) {
        const int style = i / cfg.clips_per_style;
        const int index = i % cfg.clips_per_style;
        const SynthClip c = gen_clip(cfg.seed, style, index, cfg.frames_per_clip, cfg.fps, assets.lip_teacher);
        char stem[32];
        std::snprintf(stem, sizeof stem, "clip_%04d", i);
        const std::string s = stem;
        write_wav(dir / (s + ".wav"), WavData{kSampleRate, 1, c.audio.samples}, SampleFormat::Float32);
        Eigen::MatrixXd poses = c.poses;
        write_coef(dir / (s + "_pose.coef"), CoefMatrix::from_matrix(poses));
        Eigen::MatrixXd beta(c.frames(), kExpressionDim);
        for (int t = 0; t < c.frames(); ++t) beta.row(t) = c.teacher[static_cast<std::size_t>(t)].transpose();
        write_coef(dir / (s + "_beta.coef"), CoefMatrix::from_matrix(beta));
        Eigen::MatrixXd ref(1, kMotionDim);
        ref.row(0).head(kExpressionDim) = c.beta0.transpose();
        ref.row(0).tail(kPoseDim) = c.poses.row(0);
        write_coef(dir / (s + "_ref.coef"), CoefMatrix::from_matrix(ref));
        rows[static_cast<std::size_t>(i)] = s + "," + std::to_string(style) + "," + std::to_string(c.frames()) + "," +
                                            s + ".wav," + s + "_pose.coef," + s + "_beta.coef," + s + "_ref.coef";
    });

    std::string manifest = "clip_id,style,frames,wav,pose,beta,ref\n";
    for (const auto& r : rows) manifest += r + "\n";
    write_text_file(dir / "manifest.csv", manifest);
    std::ostringstream info;
    info << "seed = " << cfg.seed << "\nfps = " << format_double(cfg.fps) << "\nnum_styles = " << cfg.num_styles
         << "\nclips_per_style = " << cfg.clips_per_style << "\nframes_per_clip = " << cfg.frames_per_clip << "\n";
    write_text_file(dir / "corpus.txt", info.str());
    return total;
}

Corpus load_corpus(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "manifest.csv")) {
        throw std::runtime_error("no corpus at " + dir.string() + " (manifest.csv missing)");
    }
    const RunConfig info = parse_config(read_text_file(dir / "corpus.txt"));
    Corpus corpus{CorpusAssets{BlendshapeLandmarkModel::from_flat(read_coef(dir / "landmark_model.coef").row(0)),
                               lip_teacher_from_flat(read_coef(dir / "lip_teacher.coef").row(0)),
                               ReadingOracle::from_flat(read_coef(dir / "reading_oracle.coef").row(0)),
                               KeypointOracle::from_flat(read_coef(dir / "keypoint_oracle.coef").row(0))},
                  {},
                  info.seed,
                  info.fps,
                  info.num_styles};

    std::istringstream in(read_text_file(dir / "manifest.csv"));
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<std::string>> entries;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 7) throw FormatError("manifest.csv: expected 7 fields");
        entries.push_back(std::move(f));
    }
    if (entries.empty()) throw EmptyInput("corpus has no clips");
    corpus.clips.resize(entries.size());
    parallel_for(static_cast<int>(entries.size()), [&](int i) {
        const auto& f = entries[static_cast<std::size_t>(i)];
        SynthClip& c = corpus.clips[static_cast<std::size_t>(i)];
        c.id = f[0];
        c.style = std::stoi(f[1]);
        const int frames = std::stoi(f[2]);
        c.audio = ingest_wav(dir / f[3]);
        c.windows = frame_windows(mel_spectrogram(c.audio), frames, corpus.fps);
        const CoefMatrix pose = read_coef(dir / f[4]);
        const CoefMatrix beta = read_coef(dir / f[5]);
        const CoefMatrix ref = read_coef(dir / f[6]);
        if (pose.rows != static_cast<std::uint32_t>(frames) || pose.dim != kPoseDim) throw FormatError(f[4] + ": bad shape");
        if (beta.rows != static_cast<std::uint32_t>(frames) || beta.dim != kExpressionDim) throw FormatError(f[5] + ": bad shape");
        if (ref.rows != 1) throw FormatError(f[6] + ": expected one row");
        require_motion_width(ref.dim, (dir / f[6]).string().c_str());
        c.poses = pose.to_matrix();
        c.teacher.resize(static_cast<std::size_t>(frames));
        for (int t = 0; t < frames; ++t)
            for (int k = 0; k < kExpressionDim; ++k) c.teacher[static_cast<std::size_t>(t)][k] = beta.at(t, k);
        for (int k = 0; k < kExpressionDim; ++k) c.beta0[k] = ref.at(0, k);
        for (int k = 0; k < 3; ++k) {
            c.rho0.rot[k] = ref.at(0, kExpressionDim + k);
            c.rho0.trans[k] = ref.at(0, kExpressionDim + 3 + k);
        }
    });
    return corpus;
}

}  // namespace sadcoeff
