#include "sadcoeff/audio.hpp"

#include "sadcoeff/errors.hpp"
#include "sadcoeff/io.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numbers>
#include <numeric>

namespace sadcoeff {

namespace {

std::uint32_t rd_u32(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

std::uint16_t rd_u16(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

void wr_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void wr_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

// FFTW's planner is not re-entrant.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

WavData decode_wav(std::span<const std::uint8_t> b) {
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
        throw FormatError("WAV: missing RIFF/WAVE header");
    }
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::span<const std::uint8_t> payload;
    bool have_data = false;

    std::size_t pos = 12;
    while (pos + 8 <= b.size()) {
        const std::uint32_t size = rd_u32(b, pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > b.size()) throw FormatError("WAV: chunk extends past end of file");
        if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
            if (size < 16) throw FormatError("WAV: fmt chunk too short");
            format = rd_u16(b, body);
            channels = rd_u16(b, body + 2);
            rate = rd_u32(b, body + 4);
            bits = rd_u16(b, body + 14);
            if (format == kFormatExtensible) {
                if (size < 40) throw FormatError("WAV: extensible fmt chunk too short");
                format = rd_u16(b, body + 24);  // first two bytes of the sub-format GUID
            }
            have_fmt = true;
        } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
            payload = b.subspan(body, size);
            have_data = true;
        }
        pos = body + size + (size & 1u);
    }
    if (!have_fmt || !have_data) throw FormatError("WAV: missing fmt or data chunk");
    if (channels == 0 || rate == 0) throw FormatError("WAV: zero channels or sample rate");

    int bytes_per_sample = bits / 8;
    const bool pcm = format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
    const bool flt = format == kFormatFloat && bits == 32;
    if (!pcm && !flt) {
        throw FormatError("WAV: unsupported encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits)");
    }
    const std::size_t frame_bytes = static_cast<std::size_t>(bytes_per_sample) * channels;
    const std::size_t n = payload.size() / frame_bytes * channels;

    WavData out;
    out.sample_rate = static_cast<int>(rate);
    out.channels = channels;
    out.interleaved.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t o = i * bytes_per_sample;
        double v = 0.0;
        if (flt) {
            v = std::bit_cast<float>(rd_u32(payload, o));
        } else if (bits == 8) {
            v = (static_cast<int>(payload[o]) - 128) / 128.0;
        } else if (bits == 16) {
            v = static_cast<std::int16_t>(rd_u16(payload, o)) / 32768.0;
        } else if (bits == 24) {
            std::int32_t s = payload[o] | (payload[o + 1] << 8) | (payload[o + 2] << 16);
            if (s & 0x800000) s -= 0x1000000;
            v = s / 8388608.0;
        } else {
            v = static_cast<std::int32_t>(rd_u32(payload, o)) / 2147483648.0;
        }
        out.interleaved[i] = v;
    }
    return out;
}

WavData read_wav(const std::filesystem::path& path) {
    const auto bytes = read_binary_file(path);
    try {
        return decode_wav(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_wav(const WavData& data, SampleFormat format) {
    if (data.channels <= 0 || data.sample_rate <= 0) throw InvalidArgument("encode_wav: bad channels/rate");
    int bits = 16;
    std::uint16_t tag = kFormatPcm;
    switch (format) {
        case SampleFormat::Pcm8: bits = 8; break;
        case SampleFormat::Pcm16: bits = 16; break;
        case SampleFormat::Pcm24: bits = 24; break;
        case SampleFormat::Float32: bits = 32; tag = kFormatFloat; break;
    }
    const std::uint32_t bps = static_cast<std::uint32_t>(bits / 8);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(data.interleaved.size()) * bps;

    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes + 1);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    wr_u32(out, 36 + data_bytes + (data_bytes & 1u));
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    wr_u32(out, 16);
    wr_u16(out, tag);
    wr_u16(out, static_cast<std::uint16_t>(data.channels));
    wr_u32(out, static_cast<std::uint32_t>(data.sample_rate));
    wr_u32(out, static_cast<std::uint32_t>(data.sample_rate) * data.channels * bps);
    wr_u16(out, static_cast<std::uint16_t>(data.channels * bps));
    wr_u16(out, static_cast<std::uint16_t>(bits));
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    wr_u32(out, data_bytes);
    for (double x : data.interleaved) {
        const double c = std::clamp(x, -1.0, 1.0);
        switch (format) {
            case SampleFormat::Pcm8:
                out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(c * 128.0) + 128, 0L, 255L)));
                break;
            case SampleFormat::Pcm16:
                wr_u16(out, static_cast<std::uint16_t>(std::clamp(std::lround(c * 32768.0), -32768L, 32767L)));
                break;
            case SampleFormat::Pcm24: {
                const long s = std::clamp(std::lround(c * 8388608.0), -8388608L, 8388607L);
                out.push_back(static_cast<std::uint8_t>(s));
                out.push_back(static_cast<std::uint8_t>(s >> 8));
                out.push_back(static_cast<std::uint8_t>(s >> 16));
                break;
            }
            case SampleFormat::Float32:
                wr_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
                break;
        }
    }
    if (data_bytes & 1u) out.push_back(0);
    return out;
}

void write_wav(const std::filesystem::path& path, const WavData& data, SampleFormat format) {
    const auto bytes = encode_wav(data, format);
    write_text_file(path, std::string(bytes.begin(), bytes.end()));
}

std::vector<double> resample(std::span<const double> x, int from_rate, int to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw InvalidArgument("resample: rates must be positive");
    if (from_rate == to_rate) return {x.begin(), x.end()};
    const int g = std::gcd(from_rate, to_rate);
    const long up = to_rate / g;
    const long down = from_rate / g;

    constexpr int kZeroCrossings = 16;
    constexpr double kRolloff = 0.945;
    constexpr double kKaiserBeta = 8.6;
    // Cutoff in cycles per input sample, relative to the input Nyquist.
    const double fc = kRolloff * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
    const int half = static_cast<int>(std::ceil(kZeroCrossings / fc));
    const int taps = 2 * half + 1;
    const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);

    // table[p][j]: weight of input sample (i0 - half + j) for output phase p/up.
    std::vector<double> table(static_cast<std::size_t>(up) * taps);
    for (long p = 0; p < up; ++p) {
        const double frac = static_cast<double>(p) / static_cast<double>(up);
        for (int j = 0; j < taps; ++j) {
            const double t = static_cast<double>(j - half) - frac;
            const double r = t / (half + 1.0);
            double w = 0.0;
            if (std::abs(r) < 1.0) w = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
            const double arg = fc * t;
            const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
            table[static_cast<std::size_t>(p) * taps + j] = fc * sinc * w;
        }
    }

    const long n_in = static_cast<long>(x.size());
    const long n_out = (n_in * up + down - 1) / down;
    std::vector<double> y(static_cast<std::size_t>(n_out));
    for (long n = 0; n < n_out; ++n) {
        const long pos = n * down;
        const long i0 = pos / up;
        const long p = pos % up;
        const double* h = &table[static_cast<std::size_t>(p) * taps];
        double acc = 0.0;
        const long lo = std::max(0L, half - i0);
        const long hi = std::min(static_cast<long>(taps), n_in - i0 + half);
        for (long j = lo; j < hi; ++j) acc += h[j] * x[static_cast<std::size_t>(i0 - half + j)];
        y[static_cast<std::size_t>(n)] = acc;
    }
    return y;
}

Waveform ingest(const WavData& data) {
    if (data.channels <= 0) throw FormatError("WAV: zero channels");
    const std::size_t frames = data.interleaved.size() / static_cast<std::size_t>(data.channels);
    if (frames == 0) throw EmptyInput("audio contains no samples");
    std::vector<double> mono(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double s = 0.0;
        for (int c = 0; c < data.channels; ++c) s += data.interleaved[i * data.channels + c];
        mono[i] = s / data.channels;
    }
    Waveform w;
    w.sample_rate = kSampleRate;
    w.samples = resample(mono, data.sample_rate, kSampleRate);
    double peak = 0.0;
    for (double v : w.samples) {
        if (!std::isfinite(v)) throw FormatError("WAV: non-finite sample");
        peak = std::max(peak, std::abs(v));
    }
    if (peak > 1.0) {
        for (double& v : w.samples) v /= peak;
    }
    if (w.samples.empty()) throw EmptyInput("audio contains no samples after resampling");
    return w;
}

Waveform ingest_wav(const std::filesystem::path& path) { return ingest(read_wav(path)); }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_centers() {
    const double top = hz_to_mel(kSampleRate / 2.0);
    std::vector<double> c(kMelBands);
    for (int m = 0; m < kMelBands; ++m) c[m] = mel_to_hz(top * (m + 1) / (kMelBands + 1));
    return c;
}

const Eigen::MatrixXd& mel_filterbank() {
    static const Eigen::MatrixXd fb = [] {
        const int bins = kFftSize / 2 + 1;
        const double top = hz_to_mel(kSampleRate / 2.0);
        std::vector<double> edges(kMelBands + 2);
        for (int i = 0; i < kMelBands + 2; ++i) edges[i] = mel_to_hz(top * i / (kMelBands + 1));
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(kMelBands, bins);
        for (int b = 0; b < kMelBands; ++b) {
            const double lo = edges[b], c = edges[b + 1], hi = edges[b + 2];
            for (int k = 0; k < bins; ++k) {
                const double f = static_cast<double>(k) * kSampleRate / kFftSize;
                const double rise = (f - lo) / (c - lo);
                const double fall = (hi - f) / (hi - c);
                m(b, k) = std::max(0.0, std::min(rise, fall));
            }
        }
        return m;
    }();
    return fb;
}

MelSpectrogram mel_spectrogram(const Waveform& w) {
    if (w.sample_rate != kSampleRate) throw InvalidArgument("mel_spectrogram: waveform must be 16 kHz");
    const long n = static_cast<long>(w.samples.size());
    if (n < kFftSize) throw EmptyInput("mel_spectrogram: audio shorter than one FFT window");
    const int num_frames = 1 + static_cast<int>((n - kFftSize) / kHopSize);
    const int bins = kFftSize / 2 + 1;

    std::vector<double> hann(kFftSize);
    for (int i = 0; i < kFftSize; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kFftSize);

    double* in = static_cast<double*>(fftw_malloc(sizeof(double) * kFftSize));
    auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins));
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        plan = fftw_plan_dft_r2c_1d(kFftSize, in, out, FFTW_ESTIMATE);
    }

    const Eigen::MatrixXd& fb = mel_filterbank();
    MelSpectrogram m;
    m.frames.resize(num_frames, kMelBands);
    Eigen::VectorXd mag(bins);
    for (int t = 0; t < num_frames; ++t) {
        const double* src = w.samples.data() + static_cast<std::ptrdiff_t>(t) * kHopSize;
        for (int i = 0; i < kFftSize; ++i) in[i] = src[i] * hann[i];
        fftw_execute(plan);
        for (int k = 0; k < bins; ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
        const Eigen::VectorXd mel = fb * mag;
        for (int b = 0; b < kMelBands; ++b) m.frames(t, b) = std::log(std::max(mel[b], kLogFloor));
    }

    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
    return m;
}

int window_start(int frame, double fps) {
    const long center = std::lround(static_cast<double>(frame) / fps * kMelFramesPerSecond);
    return static_cast<int>(center) - kWindowFrames / 2;
}

std::vector<MelWindow> frame_windows(const MelSpectrogram& m, int num_video_frames, double fps) {
    if (num_video_frames <= 0) throw InvalidArgument("frame_windows: num_video_frames must be positive");
    if (!(fps > 0.0)) throw InvalidArgument("frame_windows: fps must be positive");
    if (m.num_frames() == 0) throw EmptyInput("frame_windows: empty spectrogram");
    const int last = m.num_frames() - 1;
    std::vector<MelWindow> out(static_cast<std::size_t>(num_video_frames));
    for (int i = 0; i < num_video_frames; ++i) {
        const int start = window_start(i, fps);
        for (int r = 0; r < kWindowFrames; ++r) {
            const int src = std::clamp(start + r, 0, last);
            out[static_cast<std::size_t>(i)].window.row(r) = m.frames.row(src);
        }
    }
    return out;
}

// Frame t covers samples [t*hop, t*hop + n_fft). Under log compression an
// onset dominates the envelope in the first one or two windows it enters, so
// the frame is stamped at the start of its last hop rather than its centre.
double mel_frame_time(int t) {
    return (static_cast<double>(t) * kHopSize + kFftSize - kHopSize) / kSampleRate;
}

std::vector<double> onset_envelope(const MelSpectrogram& m) {
    const int f = m.num_frames();
    std::vector<double> env(static_cast<std::size_t>(f), 0.0);
    for (int t = 1; t < f; ++t) {
        double s = 0.0;
        for (int b = 0; b < kMelBands; ++b) s += std::max(0.0, m.frames(t, b) - m.frames(t - 1, b));
        env[static_cast<std::size_t>(t)] = s;
    }
    return env;
}

std::vector<double> audio_beats(const MelSpectrogram& m) {
    if (m.num_frames() < 3) throw InvalidArgument("audio_beats: need at least 3 mel frames");
    const auto env = onset_envelope(m);
    const double n = static_cast<double>(env.size());
    const double mean = std::accumulate(env.begin(), env.end(), 0.0) / n;
    double var = 0.0;
    for (double e : env) var += (e - mean) * (e - mean);
    const double threshold = mean + std::sqrt(var / n);

    std::vector<int> peaks;
    for (std::size_t t = 1; t + 1 < env.size(); ++t) {
        if (env[t] > threshold && env[t] > env[t - 1] && env[t] >= env[t + 1]) peaks.push_back(static_cast<int>(t));
    }
    // Greedy suppression: strongest peaks claim a 100 ms neighbourhood.
    std::vector<int> order(peaks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return env[peaks[a]] > env[peaks[b]]; });
    std::vector<double> kept;
    for (int i : order) {
        const double time = mel_frame_time(peaks[i]);
        bool clash = false;
        for (double k : kept) clash = clash || std::abs(k - time) < 0.1 - 1e-9;
        if (!clash) kept.push_back(time);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

int video_frame_count(double seconds, double fps) {
    return static_cast<int>(std::lround(seconds * fps));
}

}  // namespace sadcoeff
