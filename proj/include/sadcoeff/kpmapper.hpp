#pragma once

// MappingNet: 5-frame windows of 70-dim motion coefficients -> keypoint
// motion (yaw, pitch, roll, translation, per-keypoint deformation), the
// keypoint transform, the keypoint L1 objective and trace-map diagnostics.

#include "sadcoeff/core3dmm.hpp"
#include "sadcoeff/io.hpp"
#include "sadcoeff/metrics.hpp"
#include "sadcoeff/nn.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <vector>

namespace sadcoeff {

inline constexpr int kCoeffWindowFrames = 5;
inline constexpr int kDefaultKeypoints = 15;
// Translations enter the networks in centimetres (model units / 10).
inline constexpr double kTranslationScale = 10.0;

using CoeffWindow = Eigen::Matrix<double, kCoeffWindowFrames, kMotionDim, Eigen::RowMajor>;
using MotionSequence = Eigen::Matrix<double, Eigen::Dynamic, kMotionDim, Eigen::RowMajor>;

// Frames t-2..t+2 of a T x 70 coefficient stream, edge-clamped.
CoeffWindow coeff_window(const MotionSequence& seq, int t);
// Throws AlignmentCoefficientsRejected for 73-column input.
MotionSequence motion_sequence_from(const Eigen::MatrixXd& rows);

// Network input layout for a window: 70 x 5 channel-major (coefficient c,
// frame f at c*5 + f), translation columns divided by kTranslationScale.
std::vector<double> mapper_input(const CoeffWindow& w);

struct KeypointMotion {
    Eigen::Vector3d rot = Eigen::Vector3d::Zero();  // yaw, pitch, roll
    Eigen::Vector3d tr = Eigen::Vector3d::Zero();
    Eigen::MatrixXd delta;                          // K x 3

    static KeypointMotion zero(int k);
};

// R(yaw, pitch, roll) * x_c + tr + delta, per keypoint; xc is K x 3.
Eigen::MatrixXd transform_keypoints(const Eigen::MatrixXd& xc, const KeypointMotion& m);

// Mean over keypoints of the per-keypoint sum of absolute coordinate errors.
double keypoint_l1(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

namespace nn {
// Batched transform: rot [B,3], tr [B,3], delta [B,3K], xc K x 3 (constant).
// Returns [B, 3K] in keypoint-major order.
Tensor transform_keypoints(const Tensor& rot, const Tensor& tr, const Tensor& delta, const Eigen::MatrixXd& xc);
// [B, 3K] vs [B, 3K]: mean over batch and keypoints of per-keypoint L1.
Tensor keypoint_l1(const Tensor& pred, const Tensor& target, int k);
}  // namespace nn

struct MapperConfig {
    int channels = 128;
    int num_keypoints = kDefaultKeypoints;
};

class MappingNet {
public:
    MappingNet(const MapperConfig& cfg, std::uint64_t seed);
    MappingNet(const MappingNet&) = delete;
    MappingNet& operator=(const MappingNet&) = delete;

    struct Output {
        nn::Tensor rot;    // [B, 3]
        nn::Tensor tr;     // [B, 3]
        nn::Tensor delta;  // [B, 3K]
    };
    // input: [B, 70, 1, 5] built from mapper_input rows.
    Output forward(const nn::Tensor& input) const;
    KeypointMotion predict(const CoeffWindow& w) const;
    std::vector<KeypointMotion> predict_sequence(const MotionSequence& seq) const;

    // Sets every head weight and bias to zero.
    void zero_heads();

    const MapperConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

private:
    MapperConfig cfg_;
    nn::ParamSet params_;
    nn::Conv2d c1_, c2_, c3_;
    nn::Linear rot_, tr_, delta_;
};

nn::Tensor stack_mapper_inputs(std::span<const CoeffWindow> windows);

// ---- trace maps ---------------------------------------------------------------------

struct TraceOptions {
    int size = 512;
    // Pixels per model unit; <= 0 fits the traces into the image with a margin.
    double scale = 0.0;
    // Model-space point mapped to the image centre (used when scale > 0).
    double center_x = 0.0;
    double center_y = 0.0;
};

struct TraceMap {
    Image image;
    std::string csv;  // frame,point,x,y
    double scale = 0.0;
    double center_x = 0.0;
    double center_y = 0.0;
};

// traces[f] is a points x 2 array (x, y) for frame f. Points are drawn with
// y up; colours cycle per point.
TraceMap trace_map(std::span<const Eigen::MatrixXd> traces, const TraceOptions& opt = {});
void write_trace_map(const TraceMap& map, const std::filesystem::path& ppm, const std::filesystem::path& csv);

}  // namespace sadcoeff
