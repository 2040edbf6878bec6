#pragma once

// Waveform ingestion, log-mel spectrogram, per-video-frame mel windows and an
// onset-based audio beat detector.

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <vector>

namespace sadcoeff {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFftSize = 800;
inline constexpr int kHopSize = 200;
inline constexpr int kMelBands = 80;
inline constexpr int kMelFramesPerSecond = kSampleRate / kHopSize;  // 80
inline constexpr int kWindowFrames = 16;
inline constexpr double kLogFloor = 1e-5;

struct Waveform {
    std::vector<double> samples;
    int sample_rate = kSampleRate;

    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class SampleFormat { Pcm8, Pcm16, Pcm24, Float32 };

// Raw decoded file content before ingestion.
struct WavData {
    int sample_rate = 0;
    int channels = 0;
    std::vector<double> interleaved;  // in [-1, 1] for PCM
};

WavData read_wav(const std::filesystem::path& path);
WavData decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const WavData& data, SampleFormat format);
void write_wav(const std::filesystem::path& path, const WavData& data, SampleFormat format);

// Mono mix, resample to 16 kHz and scale down if the peak exceeds 1.
Waveform ingest(const WavData& data);
Waveform ingest_wav(const std::filesystem::path& path);

// Windowed-sinc (Kaiser) polyphase resampling between integer rates.
std::vector<double> resample(std::span<const double> x, int from_rate, int to_rate);

struct MelSpectrogram {
    Eigen::MatrixXd frames;  // F x 80, log amplitude

    int num_frames() const { return static_cast<int>(frames.rows()); }
};

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Center frequencies (Hz) of the 80 triangular bands.
std::vector<double> mel_band_centers();
// 80 x (kFftSize/2 + 1) filterbank, unit-peak triangles.
const Eigen::MatrixXd& mel_filterbank();

MelSpectrogram mel_spectrogram(const Waveform& w);

using MelWindowData = Eigen::Matrix<double, kWindowFrames, kMelBands, Eigen::RowMajor>;

struct MelWindow {
    MelWindowData window = MelWindowData::Zero();
};

// Index of the first mel frame of video frame i's window.
int window_start(int frame, double fps);
std::vector<MelWindow> frame_windows(const MelSpectrogram& m, int num_video_frames, double fps);

// Time (s) assigned to mel frame t by the beat detector.
double mel_frame_time(int t);
std::vector<double> onset_envelope(const MelSpectrogram& m);
std::vector<double> audio_beats(const MelSpectrogram& m);

// Video frame count for a clip of the given duration: round(duration * fps).
int video_frame_count(double seconds, double fps);

}  // namespace sadcoeff
