#pragma once

// 3DMM coefficient types, shape assembly, rigid head transforms, orthographic
// landmark projection and the eye-opening geometry.
//
// Conventions used across the whole library:
//   * rotation vector is (yaw, pitch, roll) in radians and
//     R = Rz(roll) * Ry(yaw) * Rx(pitch);
//   * a shape/landmark basis matrix has one row per (vertex, axis) pair in
//     vertex-major order (row 3*v + axis) and one column per coefficient;
//   * flattened 2D landmarks interleave (x, y) per point (index 2*i + axis).

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

namespace sadcoeff {

inline constexpr int kIdentityDim = 80;
inline constexpr int kExpressionDim = 64;
inline constexpr int kPoseDim = 6;
inline constexpr int kMotionDim = kExpressionDim + kPoseDim;  // 70
inline constexpr int kAlignedMotionDim = kMotionDim + 3;        // rejected layout
inline constexpr int kNumLandmarks = 68;

// Lip and eye coefficient subspaces of the expression vector.
inline constexpr int kLipBegin = 0;
inline constexpr int kLipCount = 16;
inline constexpr int kEyeBegin = 16;
inline constexpr int kEyeCount = 4;

inline constexpr bool is_lip_coefficient(int k) { return k >= kLipBegin && k < kLipBegin + kLipCount; }
inline constexpr bool is_eye_coefficient(int k) { return k >= kEyeBegin && k < kEyeBegin + kEyeCount; }

// 68-point landmark scheme: 36..41 left eye, 42..47 right eye, 48..67 mouth.
inline constexpr int kEyeLandmarkBegin = 36;
inline constexpr int kEyeLandmarkEnd = 48;  // exclusive
inline constexpr int kMouthLandmarkBegin = 48;
inline constexpr int kMouthLandmarkCount = 20;

inline constexpr bool is_eye_landmark(int i) { return i >= kEyeLandmarkBegin && i < kEyeLandmarkEnd; }
inline constexpr bool is_mouth_landmark(int i) { return i >= kMouthLandmarkBegin && i < kNumLandmarks; }

// Landmarks outside the eye areas ({0..35, 48..67}).
std::vector<int> non_eye_landmarks();

using ExpressionVector = Eigen::Matrix<double, kExpressionDim, 1>;
using IdentityVector = Eigen::Matrix<double, kIdentityDim, 1>;
using MotionVector = Eigen::Matrix<double, kMotionDim, 1>;

struct IdentityCoeffs {
    IdentityVector alpha = IdentityVector::Zero();

    static IdentityCoeffs from(std::span<const double> values);
};

struct ExpressionCoeffs {
    ExpressionVector beta = ExpressionVector::Zero();

    static ExpressionCoeffs from(std::span<const double> values);
};

struct PoseCoeffs {
    Eigen::Vector3d rot = Eigen::Vector3d::Zero();    // yaw, pitch, roll
    Eigen::Vector3d trans = Eigen::Vector3d::Zero();

    double yaw() const { return rot[0]; }
    double pitch() const { return rot[1]; }
    double roll() const { return rot[2]; }

    // Validates length 6, finiteness and angles in (-pi, pi].
    static PoseCoeffs from(std::span<const double> values);
    std::array<double, kPoseDim> to_array() const;
};

struct MotionCoeffs {
    ExpressionCoeffs beta;
    PoseCoeffs pose;

    // Expects exactly 70 values (expression then pose). A 73-value input is
    // rejected with AlignmentCoefficientsRejected.
    static MotionCoeffs from_flat(std::span<const double> values);
    MotionVector flat() const;
};

// Wraps an angle into (-pi, pi].
double wrap_angle(double radians);

// Checks a raw coefficient row width; throws AlignmentCoefficientsRejected for
// 73 and InvalidArgument for anything else that is not `expected`.
void require_motion_width(std::size_t width, const char* where);

class BlendshapeModel {
public:
    // mean_shape: V x 3; id_basis: 3V x 80; exp_basis: 3V x 64.
    BlendshapeModel(Eigen::MatrixXd mean_shape, Eigen::MatrixXd id_basis, Eigen::MatrixXd exp_basis);

    int num_vertices() const { return static_cast<int>(mean_shape_.rows()); }
    const Eigen::MatrixXd& mean_shape() const { return mean_shape_; }
    const Eigen::MatrixXd& id_basis() const { return id_basis_; }
    const Eigen::MatrixXd& exp_basis() const { return exp_basis_; }

private:
    Eigen::MatrixXd mean_shape_;
    Eigen::MatrixXd id_basis_;
    Eigen::MatrixXd exp_basis_;
};

// S = S_mean + U_id * alpha + U_exp * beta, returned as V x 3.
Eigen::MatrixXd assemble_shape(const BlendshapeModel& model, const IdentityCoeffs& alpha,
                               const ExpressionCoeffs& beta);
// Dynamic-length variant; throws InvalidArgument on mismatched lengths.
Eigen::MatrixXd assemble_shape(const BlendshapeModel& model, std::span<const double> alpha,
                               std::span<const double> beta);

Eigen::Matrix3d euler_to_rotation(const Eigen::Vector3d& rot);
// dR/d(yaw), dR/d(pitch), dR/d(roll).
std::array<Eigen::Matrix3d, 3> euler_rotation_derivatives(const Eigen::Vector3d& rot);

// points * R^T + t for an N x 3 point set.
Eigen::MatrixXd rigid_transform(const Eigen::MatrixXd& points, const PoseCoeffs& pose);

// Linear landmark model: mean 68x3 plus an expression basis (204 x 64) whose
// lip and eye blocks obey the subspace invariants checked in the constructor.
class BlendshapeLandmarkModel {
public:
    BlendshapeLandmarkModel(Eigen::MatrixXd mean_landmarks, Eigen::MatrixXd exp_landmark_basis);

    static constexpr int kFlatSize = kNumLandmarks * 3 * (1 + kExpressionDim);

    const Eigen::MatrixXd& mean_landmarks() const { return mean_; }
    const Eigen::MatrixXd& exp_landmark_basis() const { return basis_; }

    // 2D (x, y) part of the model: mean as 136-vector and basis as 136 x 64,
    // in interleaved flat landmark order.
    const Eigen::VectorXd& mean_2d() const { return mean2d_; }
    const Eigen::MatrixXd& basis_2d() const { return basis2d_; }

    // Mean landmarks row-major, then one 68x3 row-major slice per coefficient.
    std::vector<double> to_flat() const;
    static BlendshapeLandmarkModel from_flat(std::span<const double> flat);

private:
    Eigen::MatrixXd mean_;
    Eigen::MatrixXd basis_;
    Eigen::VectorXd mean2d_;
    Eigen::MatrixXd basis2d_;
};

struct Landmarks2D {
    Eigen::Matrix<double, kNumLandmarks, 2> points = Eigen::Matrix<double, kNumLandmarks, 2>::Zero();

    Eigen::Matrix<double, 2 * kNumLandmarks, 1> flat() const;
    static Landmarks2D from_flat(std::span<const double> flat);
};

// Landmarks of L_mean + basis * beta after the head pose, orthographically
// projected (z dropped).
Landmarks2D project_landmarks(const BlendshapeLandmarkModel& lmodel, const MotionCoeffs& coeffs);

// d(flat landmarks)/d(beta), 136 x 64, at the given pose.
Eigen::MatrixXd project_landmarks_jacobian(const BlendshapeLandmarkModel& lmodel, const PoseCoeffs& pose);

struct EyeGeometry {
    double width = 0.0;   // mean corner-to-corner distance of both eyes
    double height = 0.0;  // summed lid openings of both eyes
    double ratio = 0.0;   // height / width
};

EyeGeometry eye_geometry(const Landmarks2D& lms);
// Throws DegenerateGeometry when the eye width is zero.
double eye_ratio(const Landmarks2D& lms);
// Gradient of eye_ratio w.r.t. every landmark coordinate (68 x 2). At a
// closed lid (zero opening) the subgradient 0 is used for that norm.
Eigen::Matrix<double, kNumLandmarks, 2> eye_ratio_gradient(const Landmarks2D& lms);

}  // namespace sadcoeff
