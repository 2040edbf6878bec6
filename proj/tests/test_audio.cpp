#include "doctest.h"

#include "sadcoeff/audio.hpp"
#include "sadcoeff/errors.hpp"

#include <cmath>
#include <complex>
#include <numbers>

using namespace sadcoeff;

namespace {

std::vector<double> sine(double hz, int rate, double seconds, double amp = 0.5) {
    std::vector<double> x(static_cast<std::size_t>(std::lround(seconds * rate)));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate);
    return x;
}

// Index of the largest-magnitude bin of a direct DFT over [0, n/2].
std::size_t dft_peak(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t k = 1; k <= n / 2; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t % n) / double(n));
        if (std::abs(acc) > best_mag) best_mag = std::abs(acc), best = k;
    }
    return best;
}

}  // namespace

TEST_CASE("16-bit mono WAV is converted by 1/32768 without resampling") {
    WavData in;
    in.sample_rate = kSampleRate;
    in.channels = 1;
    for (int v : {0, 1, -1, 16384, -32768, 32767}) in.interleaved.push_back(v / 32768.0);
    const Waveform w = ingest(decode_wav(encode_wav(in, SampleFormat::Pcm16)));
    REQUIRE(w.samples.size() == in.interleaved.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(w.samples[i] == in.interleaved[i]);
    CHECK(w.sample_rate == kSampleRate);
}

TEST_CASE("stereo with identical channels equals mono") {
    const auto x = sine(300, kSampleRate, 0.1);
    WavData mono{kSampleRate, 1, x};
    WavData stereo{kSampleRate, 2, {}};
    for (double v : x) stereo.interleaved.insert(stereo.interleaved.end(), {v, v});
    CHECK(ingest(stereo).samples == ingest(mono).samples);
}

TEST_CASE("resampling 32 kHz keeps a 440 Hz peak") {
    WavData in{32000, 1, sine(440, 32000, 0.25)};
    const Waveform w = ingest(in);
    CHECK(w.samples.size() == 4000);
    // 0.25 s: bin spacing 4 Hz.
    const double hz = static_cast<double>(dft_peak(w.samples)) * kSampleRate / static_cast<double>(w.samples.size());
    CHECK(std::abs(hz - 440.0) <= 4.0);
}

TEST_CASE("WAV errors") {
    const std::vector<std::uint8_t> junk{'R', 'I', 'F', 'X', 0, 0, 0, 0};
    CHECK_THROWS_AS(decode_wav(junk), FormatError);
    CHECK_THROWS_AS(ingest(WavData{kSampleRate, 1, {}}), EmptyInput);
}

TEST_CASE("WAV formats round-trip") {
    WavData in{kSampleRate, 1, {0.0, 0.25, -0.5, 0.75}};
    for (auto f : {SampleFormat::Pcm16, SampleFormat::Pcm24, SampleFormat::Float32}) {
        const WavData out = decode_wav(encode_wav(in, f));
        CHECK(out.sample_rate == kSampleRate);
        REQUIRE(out.interleaved.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out.interleaved[i] == doctest::Approx(in.interleaved[i]).epsilon(1e-4));
    }
}

TEST_CASE("mel spectrogram frame count and silence floor") {
    Waveform w;
    w.samples.assign(16000, 0.0);
    const MelSpectrogram m = mel_spectrogram(w);
    CHECK(m.num_frames() == 1 + (16000 - kFftSize) / kHopSize);
    CHECK(m.num_frames() == 77);
    CHECK(m.frames.cols() == kMelBands);
    CHECK((m.frames.array() == std::log(kLogFloor)).all());

    Waveform tiny;
    tiny.samples.assign(kFftSize - 1, 0.1);
    CHECK_THROWS_AS(mel_spectrogram(tiny), EmptyInput);
}

TEST_CASE("pure 1 kHz tone peaks in the nearest mel band") {
    Waveform w;
    w.samples = sine(1000, kSampleRate, 1.0);
    const MelSpectrogram m = mel_spectrogram(w);
    const auto centers = mel_band_centers();
    int nearest = 0;
    for (int b = 0; b < kMelBands; ++b)
        if (std::abs(centers[b] - 1000.0) < std::abs(centers[nearest] - 1000.0)) nearest = b;
    for (int t = 0; t < m.num_frames(); ++t) {
        int arg = 0;
        m.frames.row(t).maxCoeff(&arg);
        CHECK(arg == nearest);
    }
}

TEST_CASE("frame windows") {
    CHECK(window_start(25, 25.0) + kWindowFrames / 2 == 80);
    MelSpectrogram m;
    m.frames = Eigen::MatrixXd::Constant(50, kMelBands, -2.0);
    const auto w = frame_windows(m, 10, 25.0);
    CHECK(w.size() == 10);
    for (const auto& win : w) CHECK((win.window.array() == -2.0).all());
    CHECK_THROWS_AS(frame_windows(m, 0, 25.0), InvalidArgument);
}

TEST_CASE("audio beats") {
    Waveform silence;
    silence.samples.assign(32000, 0.0);
    CHECK(audio_beats(mel_spectrogram(silence)).empty());

    SUBCASE("2 Hz click train") {
        Waveform w;
        w.samples.assign(4 * kSampleRate, 0.0);
        std::vector<double> clicks;
        for (double t = 0.25; t < 3.8; t += 0.5) {
            clicks.push_back(t);
            const auto i = static_cast<std::size_t>(std::lround(t * kSampleRate));
            for (std::size_t k = 0; k < 40; ++k) w.samples[i + k] = (k % 2 ? -0.9 : 0.9) * (1.0 - k / 40.0);
        }
        const auto beats = audio_beats(mel_spectrogram(w));
        CHECK(beats.size() == clicks.size());
        for (double c : clicks) {
            double best = 1e9;
            for (double b : beats) best = std::min(best, std::abs(b - c));
            CHECK(best <= 0.0125);
        }
    }

    SUBCASE("two clicks 50 ms apart count once") {
        Waveform w;
        w.samples.assign(2 * kSampleRate, 0.0);
        for (double t : {1.0, 1.05}) {
            const auto i = static_cast<std::size_t>(std::lround(t * kSampleRate));
            for (std::size_t k = 0; k < 40; ++k) w.samples[i + k] = (k % 2 ? -0.9 : 0.9);
        }
        CHECK(audio_beats(mel_spectrogram(w)).size() == 1);
    }
}

TEST_CASE("video frame count") {
    CHECK(video_frame_count(1.0, 25.0) == 25);
    CHECK(video_frame_count(2.5, 25.0) == 63);
}
