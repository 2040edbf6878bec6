#include "sadcoeff/metrics.hpp"

#include "sadcoeff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sadcoeff {

double pose_diversity(std::span<const PoseSequence> sequences) {
    if (sequences.size() < 2) throw InvalidArgument("pose_diversity: need at least 2 sequences");
    const Eigen::Index frames = sequences.front().rows();
    if (frames == 0) throw InvalidArgument("pose_diversity: empty sequences");
    for (const auto& s : sequences) {
        if (s.rows() != frames) throw InvalidArgument("pose_diversity: sequences differ in length");
    }
    const double n = static_cast<double>(sequences.size());
    double total = 0.0;
    for (int d = 0; d < kPoseDim; ++d) {
        double dim_sum = 0.0;
        for (Eigen::Index t = 0; t < frames; ++t) {
            double mean = 0.0;
            for (const auto& s : sequences) mean += s(t, d);
            mean /= n;
            double var = 0.0;
            for (const auto& s : sequences) var += (s(t, d) - mean) * (s(t, d) - mean);
            dim_sum += std::sqrt(var / n);
        }
        total += dim_sum / static_cast<double>(frames);
    }
    return total / kPoseDim;
}

std::vector<double> motion_beats(const PoseSequence& seq, double fps) {
    if (seq.rows() < 3) throw InvalidArgument("motion_beats: need at least 3 frames");
    if (!(fps > 0.0)) throw InvalidArgument("motion_beats: fps must be positive");
    const Eigen::Index n = seq.rows() - 1;
    std::vector<double> speed(static_cast<std::size_t>(n));
    for (Eigen::Index t = 0; t < n; ++t) speed[t] = (seq.row(t + 1) - seq.row(t)).norm();

    const double mean = std::accumulate(speed.begin(), speed.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double s : speed) var += (s - mean) * (s - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (sd == 0.0) return {};
    const double threshold = mean - 0.5 * sd;

    std::vector<std::size_t> minima;
    for (std::size_t t = 1; t + 1 < speed.size(); ++t) {
        if (speed[t] < threshold && speed[t] < speed[t - 1] && speed[t] <= speed[t + 1]) minima.push_back(t);
    }
    // Speed sample t spans frames t..t+1; its time is the midpoint. Deeper
    // minima win within a 100 ms neighbourhood.
    std::vector<std::size_t> order(minima.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return speed[minima[a]] < speed[minima[b]];
    });
    std::vector<double> kept;
    for (std::size_t i : order) {
        const double time = (static_cast<double>(minima[i]) + 0.5) / fps;
        bool clash = false;
        for (double k : kept) clash = clash || std::abs(k - time) < 0.1 - 1e-9;
        if (!clash) kept.push_back(time);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

double beat_align(std::span<const double> audio_beats, std::span<const double> motion_beats,
                  const BeatAlignConfig& cfg) {
    if (!(cfg.sigma > 0.0)) throw InvalidArgument("beat_align: sigma must be positive");
    if (audio_beats.empty() || motion_beats.empty()) return 0.0;
    double acc = 0.0;
    for (double ta : audio_beats) {
        double best = std::numeric_limits<double>::infinity();
        for (double tm : motion_beats) best = std::min(best, (ta - tm) * (ta - tm));
        acc += std::exp(-best / (2.0 * cfg.sigma * cfg.sigma));
    }
    return acc / static_cast<double>(audio_beats.size());
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("pearson: length mismatch");
    if (a.size() < 2) throw InvalidArgument("pearson: need at least 2 samples");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw DegenerateInput("correlation undefined: zero variance");
    return sab / std::sqrt(saa * sbb);
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j);
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    return pearson(ra, rb);
}

double blink_recovery(std::span<const Landmarks2D> pred, std::span<const double> blink) {
    if (pred.size() != blink.size()) throw InvalidArgument("blink_recovery: length mismatch");
    if (pred.size() < 3) throw InvalidArgument("blink_recovery: need at least 3 frames");
    std::vector<double> r(pred.size());
    for (std::size_t t = 0; t < pred.size(); ++t) r[t] = eye_ratio(pred[t]);
    return pearson(r, blink);
}

}  // namespace sadcoeff
