#pragma once

// Coefficient-level motion metrics: head-pose diversity, Beat Align Score and
// blink-signal recovery.

#include "sadcoeff/core3dmm.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace sadcoeff {

// T x 6 per-frame pose rows.
using PoseSequence = Eigen::Matrix<double, Eigen::Dynamic, kPoseDim, Eigen::RowMajor>;

struct BeatAlignConfig {
    double sigma = 0.1;  // seconds
};

// Mean over the 6 pose dimensions of the per-frame population standard
// deviation across sequences, averaged over frames.
double pose_diversity(std::span<const PoseSequence> sequences);

std::vector<double> motion_beats(const PoseSequence& seq, double fps);

double beat_align(std::span<const double> audio_beats, std::span<const double> motion_beats,
                  const BeatAlignConfig& cfg = {});

double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

double blink_recovery(std::span<const Landmarks2D> pred, std::span<const double> blink);

}  // namespace sadcoeff
