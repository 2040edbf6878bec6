#include "sadcoeff/core3dmm.hpp"

#include "sadcoeff/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace sadcoeff {

namespace {

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite entry");
    }
}

void require_length(std::span<const double> values, std::size_t n, const char* what) {
    if (values.size() != n) {
        throw InvalidArgument(std::string(what) + ": expected " + std::to_string(n) + " values, got " +
                              std::to_string(values.size()));
    }
}

}  // namespace

std::vector<int> non_eye_landmarks() {
    std::vector<int> out;
    for (int i = 0; i < kNumLandmarks; ++i) {
        if (!is_eye_landmark(i)) out.push_back(i);
    }
    return out;
}

IdentityCoeffs IdentityCoeffs::from(std::span<const double> values) {
    require_length(values, kIdentityDim, "IdentityCoeffs");
    require_finite(values, "IdentityCoeffs");
    IdentityCoeffs c;
    for (int i = 0; i < kIdentityDim; ++i) c.alpha[i] = values[i];
    return c;
}

ExpressionCoeffs ExpressionCoeffs::from(std::span<const double> values) {
    require_length(values, kExpressionDim, "ExpressionCoeffs");
    require_finite(values, "ExpressionCoeffs");
    ExpressionCoeffs c;
    for (int i = 0; i < kExpressionDim; ++i) c.beta[i] = values[i];
    return c;
}

PoseCoeffs PoseCoeffs::from(std::span<const double> values) {
    require_length(values, kPoseDim, "PoseCoeffs");
    require_finite(values, "PoseCoeffs");
    PoseCoeffs p;
    for (int i = 0; i < 3; ++i) {
        if (values[i] <= -std::numbers::pi || values[i] > std::numbers::pi) {
            throw InvalidArgument("PoseCoeffs: Euler angle outside (-pi, pi]");
        }
        p.rot[i] = values[i];
        p.trans[i] = values[3 + i];
    }
    return p;
}

std::array<double, kPoseDim> PoseCoeffs::to_array() const {
    return {rot[0], rot[1], rot[2], trans[0], trans[1], trans[2]};
}

void require_motion_width(std::size_t width, const char* where) {
    if (width == static_cast<std::size_t>(kAlignedMotionDim)) throw AlignmentCoefficientsRejected(where);
    if (width != static_cast<std::size_t>(kMotionDim)) {
        throw InvalidArgument(std::string(where) + ": expected 70 motion coefficients, got " +
                              std::to_string(width));
    }
}

MotionCoeffs MotionCoeffs::from_flat(std::span<const double> values) {
    require_motion_width(values.size(), "MotionCoeffs");
    MotionCoeffs m;
    m.beta = ExpressionCoeffs::from(values.subspan(0, kExpressionDim));
    m.pose = PoseCoeffs::from(values.subspan(kExpressionDim, kPoseDim));
    return m;
}

MotionVector MotionCoeffs::flat() const {
    MotionVector v;
    v.head<kExpressionDim>() = beta.beta;
    v.segment<3>(kExpressionDim) = pose.rot;
    v.segment<3>(kExpressionDim + 3) = pose.trans;
    return v;
}

double wrap_angle(double radians) {
    double a = std::remainder(radians, 2.0 * std::numbers::pi);  // [-pi, pi]
    if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
    return a;
}

BlendshapeModel::BlendshapeModel(Eigen::MatrixXd mean_shape, Eigen::MatrixXd id_basis, Eigen::MatrixXd exp_basis)
    : mean_shape_(std::move(mean_shape)), id_basis_(std::move(id_basis)), exp_basis_(std::move(exp_basis)) {
    const Eigen::Index v = mean_shape_.rows();
    if (mean_shape_.cols() != 3 || v < kNumLandmarks) {
        throw InvalidArgument("BlendshapeModel: mean shape must be V x 3 with V >= 68");
    }
    if (id_basis_.rows() != 3 * v || id_basis_.cols() != kIdentityDim) {
        throw InvalidArgument("BlendshapeModel: identity basis must be 3V x 80");
    }
    if (exp_basis_.rows() != 3 * v || exp_basis_.cols() != kExpressionDim) {
        throw InvalidArgument("BlendshapeModel: expression basis must be 3V x 64");
    }
    for (const Eigen::MatrixXd* basis : {&id_basis_, &exp_basis_}) {
        for (Eigen::Index k = 0; k < basis->cols(); ++k) {
            if (std::abs(basis->col(k).norm() - 1.0) > 1e-9) {
                throw InvalidArgument("BlendshapeModel: basis columns must have unit Frobenius norm");
            }
        }
    }
}

Eigen::MatrixXd assemble_shape(const BlendshapeModel& model, const IdentityCoeffs& alpha,
                               const ExpressionCoeffs& beta) {
    const int v = model.num_vertices();
    Eigen::VectorXd flat = model.id_basis() * alpha.alpha + model.exp_basis() * beta.beta;
    Eigen::MatrixXd shape = model.mean_shape();
    shape += Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(flat.data(), v, 3);
    return shape;
}

Eigen::MatrixXd assemble_shape(const BlendshapeModel& model, std::span<const double> alpha,
                               std::span<const double> beta) {
    return assemble_shape(model, IdentityCoeffs::from(alpha), ExpressionCoeffs::from(beta));
}

namespace {

Eigen::Matrix3d rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d r;
    r << 1, 0, 0, 0, c, -s, 0, s, c;
    return r;
}
Eigen::Matrix3d rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d r;
    r << c, 0, s, 0, 1, 0, -s, 0, c;
    return r;
}
Eigen::Matrix3d rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d r;
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
}
Eigen::Matrix3d drot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d r;
    r << 0, 0, 0, 0, -s, -c, 0, c, -s;
    return r;
}
Eigen::Matrix3d drot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d r;
    r << -s, 0, c, 0, 0, 0, -c, 0, -s;
    return r;
}
Eigen::Matrix3d drot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d r;
    r << -s, -c, 0, c, -s, 0, 0, 0, 0;
    return r;
}

}  // namespace

Eigen::Matrix3d euler_to_rotation(const Eigen::Vector3d& rot) {
    for (int i = 0; i < 3; ++i) {
        if (!std::isfinite(rot[i])) throw InvalidArgument("euler_to_rotation: non-finite angle");
    }
    return rot_z(rot[2]) * rot_y(rot[0]) * rot_x(rot[1]);
}

std::array<Eigen::Matrix3d, 3> euler_rotation_derivatives(const Eigen::Vector3d& rot) {
    const double yaw = rot[0], pitch = rot[1], roll = rot[2];
    return {rot_z(roll) * drot_y(yaw) * rot_x(pitch), rot_z(roll) * rot_y(yaw) * drot_x(pitch),
            drot_z(roll) * rot_y(yaw) * rot_x(pitch)};
}

Eigen::MatrixXd rigid_transform(const Eigen::MatrixXd& points, const PoseCoeffs& pose) {
    if (points.cols() != 3) throw InvalidArgument("rigid_transform: points must be N x 3");
    const Eigen::Matrix3d r = euler_to_rotation(pose.rot);
    Eigen::MatrixXd out = points * r.transpose();
    out.rowwise() += pose.trans.transpose();
    return out;
}

BlendshapeLandmarkModel::BlendshapeLandmarkModel(Eigen::MatrixXd mean_landmarks, Eigen::MatrixXd exp_landmark_basis)
    : mean_(std::move(mean_landmarks)), basis_(std::move(exp_landmark_basis)) {
    if (mean_.rows() != kNumLandmarks || mean_.cols() != 3) {
        throw InvalidArgument("BlendshapeLandmarkModel: mean landmarks must be 68 x 3");
    }
    if (basis_.rows() != 3 * kNumLandmarks || basis_.cols() != kExpressionDim) {
        throw InvalidArgument("BlendshapeLandmarkModel: basis must be 204 x 64");
    }
    if (!mean_.allFinite() || !basis_.allFinite()) {
        throw InvalidArgument("BlendshapeLandmarkModel: non-finite entries");
    }
    // Eye coefficients: vertical-only motion of eye landmarks, upper and lower
    // lids moving in opposite directions.
    constexpr std::array<int, 4> kUpper{37, 38, 43, 44};
    constexpr std::array<int, 4> kLower{40, 41, 46, 47};
    for (int k = kEyeBegin; k < kEyeBegin + kEyeCount; ++k) {
        for (int i = 0; i < kNumLandmarks; ++i) {
            for (int axis = 0; axis < 3; ++axis) {
                const double d = basis_(3 * i + axis, k);
                const bool allowed = is_eye_landmark(i) && axis == 1;
                if (!allowed && d != 0.0) {
                    throw InvalidArgument("BlendshapeLandmarkModel: eye coefficient " + std::to_string(k) +
                                          " moves landmark " + std::to_string(i) + " outside the eye/vertical subspace");
                }
            }
        }
        for (int j = 0; j < 4; ++j) {
            const double up = basis_(3 * kUpper[j] + 1, k);
            const double lo = basis_(3 * kLower[j] + 1, k);
            if (up * lo > 0.0) {
                throw InvalidArgument("BlendshapeLandmarkModel: eyelids must move in opposing directions");
            }
        }
    }
    for (int k = kLipBegin; k < kLipBegin + kLipCount; ++k) {
        for (int i = 0; i < kNumLandmarks; ++i) {
            if (is_mouth_landmark(i)) continue;
            for (int axis = 0; axis < 3; ++axis) {
                if (basis_(3 * i + axis, k) != 0.0) {
                    throw InvalidArgument("BlendshapeLandmarkModel: lip coefficient " + std::to_string(k) +
                                          " moves non-mouth landmark " + std::to_string(i));
                }
            }
        }
    }
    mean2d_.resize(2 * kNumLandmarks);
    basis2d_.resize(2 * kNumLandmarks, kExpressionDim);
    for (int i = 0; i < kNumLandmarks; ++i) {
        for (int axis = 0; axis < 2; ++axis) {
            mean2d_[2 * i + axis] = mean_(i, axis);
            basis2d_.row(2 * i + axis) = basis_.row(3 * i + axis);
        }
    }
}

std::vector<double> BlendshapeLandmarkModel::to_flat() const {
    std::vector<double> flat;
    flat.reserve(kFlatSize);
    for (int i = 0; i < kNumLandmarks; ++i) {
        for (int axis = 0; axis < 3; ++axis) flat.push_back(mean_(i, axis));
    }
    for (int k = 0; k < kExpressionDim; ++k) {
        for (int r = 0; r < 3 * kNumLandmarks; ++r) flat.push_back(basis_(r, k));
    }
    return flat;
}

BlendshapeLandmarkModel BlendshapeLandmarkModel::from_flat(std::span<const double> flat) {
    if (flat.size() != static_cast<std::size_t>(kFlatSize)) {
        throw InvalidArgument("BlendshapeLandmarkModel: expected " + std::to_string(kFlatSize) + " values, got " +
                              std::to_string(flat.size()));
    }
    Eigen::MatrixXd mean(kNumLandmarks, 3);
    Eigen::MatrixXd basis(3 * kNumLandmarks, kExpressionDim);
    std::size_t p = 0;
    for (int i = 0; i < kNumLandmarks; ++i) {
        for (int axis = 0; axis < 3; ++axis) mean(i, axis) = flat[p++];
    }
    for (int k = 0; k < kExpressionDim; ++k) {
        for (int r = 0; r < 3 * kNumLandmarks; ++r) basis(r, k) = flat[p++];
    }
    return BlendshapeLandmarkModel(std::move(mean), std::move(basis));
}

Eigen::Matrix<double, 2 * kNumLandmarks, 1> Landmarks2D::flat() const {
    Eigen::Matrix<double, 2 * kNumLandmarks, 1> v;
    for (int i = 0; i < kNumLandmarks; ++i) {
        v[2 * i] = points(i, 0);
        v[2 * i + 1] = points(i, 1);
    }
    return v;
}

Landmarks2D Landmarks2D::from_flat(std::span<const double> flat) {
    if (flat.size() != 2 * kNumLandmarks) throw InvalidArgument("Landmarks2D: expected 136 values");
    Landmarks2D l;
    for (int i = 0; i < kNumLandmarks; ++i) {
        l.points(i, 0) = flat[2 * i];
        l.points(i, 1) = flat[2 * i + 1];
    }
    return l;
}

Landmarks2D project_landmarks(const BlendshapeLandmarkModel& lmodel, const MotionCoeffs& coeffs) {
    const Eigen::VectorXd flat3 = lmodel.exp_landmark_basis() * coeffs.beta.beta;
    Eigen::MatrixXd pts = lmodel.mean_landmarks();
    pts += Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(flat3.data(), kNumLandmarks, 3);
    const Eigen::MatrixXd moved = rigid_transform(pts, coeffs.pose);
    Landmarks2D out;
    out.points = moved.leftCols<2>();
    return out;
}

Eigen::MatrixXd project_landmarks_jacobian(const BlendshapeLandmarkModel& lmodel, const PoseCoeffs& pose) {
    const Eigen::Matrix3d r = euler_to_rotation(pose.rot);
    const Eigen::MatrixXd& b = lmodel.exp_landmark_basis();
    Eigen::MatrixXd jac(2 * kNumLandmarks, kExpressionDim);
    for (int i = 0; i < kNumLandmarks; ++i) {
        const Eigen::MatrixXd block = r.topRows<2>() * b.middleRows(3 * i, 3);
        jac.middleRows(2 * i, 2) = block;
    }
    return jac;
}

EyeGeometry eye_geometry(const Landmarks2D& lms) {
    const auto p = [&](int i) -> Eigen::Vector2d { return lms.points.row(i).transpose(); };
    EyeGeometry g;
    g.width = ((p(39) - p(36)).norm() + (p(45) - p(42)).norm()) / 2.0;
    g.height = (p(37) + p(38) - p(40) - p(41)).norm() / 2.0 + (p(43) + p(44) - p(46) - p(47)).norm() / 2.0;
    if (g.width == 0.0) throw DegenerateGeometry("eye_ratio: zero eye width");
    g.ratio = g.height / g.width;
    return g;
}

double eye_ratio(const Landmarks2D& lms) { return eye_geometry(lms).ratio; }

Eigen::Matrix<double, kNumLandmarks, 2> eye_ratio_gradient(const Landmarks2D& lms) {
    const auto p = [&](int i) -> Eigen::Vector2d { return lms.points.row(i).transpose(); };
    const EyeGeometry g = eye_geometry(lms);
    const auto unit = [](const Eigen::Vector2d& v) -> Eigen::Vector2d {
        const double n = v.norm();
        return n > 0.0 ? Eigen::Vector2d(v / n) : Eigen::Vector2d::Zero();
    };
    Eigen::Matrix<double, kNumLandmarks, 2> grad = Eigen::Matrix<double, kNumLandmarks, 2>::Zero();
    // Height part: dR = dh / w.
    const Eigen::Vector2d ul = unit(p(37) + p(38) - p(40) - p(41)) / (2.0 * g.width);
    const Eigen::Vector2d ur = unit(p(43) + p(44) - p(46) - p(47)) / (2.0 * g.width);
    for (int i : {37, 38}) grad.row(i) += ul.transpose();
    for (int i : {40, 41}) grad.row(i) -= ul.transpose();
    for (int i : {43, 44}) grad.row(i) += ur.transpose();
    for (int i : {46, 47}) grad.row(i) -= ur.transpose();
    // Width part: dR = -h dw / w^2.
    const double s = -g.height / (g.width * g.width) / 2.0;
    const Eigen::Vector2d al = unit(p(39) - p(36)) * s;
    const Eigen::Vector2d ar = unit(p(45) - p(42)) * s;
    grad.row(39) += al.transpose();
    grad.row(36) -= al.transpose();
    grad.row(45) += ar.transpose();
    grad.row(42) -= ar.transpose();
    return grad;
}

}  // namespace sadcoeff
