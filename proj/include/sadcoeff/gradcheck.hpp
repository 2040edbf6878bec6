#pragma once

// Finite-difference checks of the three training objectives on tiny seeded
// models with random inputs (no corpus needed).

#include "sadcoeff/nn.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace sadcoeff {

inline constexpr double kGradCheckTolerance = 1e-3;

struct GradCheckSuite {
    std::string module;  // "expnet", "posevae" or "kpmapper"
    std::vector<nn::GradGroupReport> groups;

    double max_rel_error() const;
    bool passed() const { return max_rel_error() < kGradCheckTolerance; }
};

// L_exp with encoder widths 4,4,8,8 on 2 x 5 random windows.
GradCheckSuite gradcheck_expnet(std::uint64_t seed, const nn::GradCheckOptions& opt);
// L_pose with lambda_GAN = 0; widths 4,4,8,8, latent 4, hidden 8, batch 2.
GradCheckSuite gradcheck_posevae(std::uint64_t seed, const nn::GradCheckOptions& opt);
// 20 x keypoint L1; 8 channels, 4 keypoints, batch 3.
GradCheckSuite gradcheck_mapper(std::uint64_t seed, const nn::GradCheckOptions& opt);

// module: "expnet", "posevae", "kpmapper" or "all".
std::vector<GradCheckSuite> run_gradchecks(const std::string& module, std::uint64_t seed, const nn::GradCheckOptions& opt);

// One line per group, then a PASS/FAIL line per suite.
void print_gradcheck(std::ostream& os, const std::vector<GradCheckSuite>& suites);

}  // namespace sadcoeff
