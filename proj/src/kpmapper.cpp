#include "sadcoeff/kpmapper.hpp"

#include "sadcoeff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sadcoeff {

CoeffWindow coeff_window(const MotionSequence& seq, int t) {
    if (seq.rows() == 0) throw InvalidArgument("coeff_window: empty sequence");
    const int last = static_cast<int>(seq.rows()) - 1;
    CoeffWindow w;
    for (int f = 0; f < kCoeffWindowFrames; ++f) w.row(f) = seq.row(std::clamp(t - 2 + f, 0, last));
    return w;
}

MotionSequence motion_sequence_from(const Eigen::MatrixXd& rows) {
    require_motion_width(static_cast<std::size_t>(rows.cols()), "motion sequence");
    return rows;
}

std::vector<double> mapper_input(const CoeffWindow& w) {
    std::vector<double> in(static_cast<std::size_t>(kMotionDim * kCoeffWindowFrames));
    for (int c = 0; c < kMotionDim; ++c) {
        const double s = c >= kMotionDim - 3 ? 1.0 / kTranslationScale : 1.0;
        for (int f = 0; f < kCoeffWindowFrames; ++f) in[static_cast<std::size_t>(c * kCoeffWindowFrames + f)] = s * w(f, c);
    }
    return in;
}

KeypointMotion KeypointMotion::zero(int k) {
    KeypointMotion m;
    m.delta = Eigen::MatrixXd::Zero(k, 3);
    return m;
}

Eigen::MatrixXd transform_keypoints(const Eigen::MatrixXd& xc, const KeypointMotion& m) {
    if (xc.cols() != 3 || m.delta.rows() != xc.rows() || m.delta.cols() != 3) {
        throw InvalidArgument("transform_keypoints: xc and delta must both be K x 3");
    }
    const Eigen::Matrix3d r = euler_to_rotation(m.rot);
    Eigen::MatrixXd out = xc * r.transpose() + m.delta;
    out.rowwise() += m.tr.transpose();
    return out;
}

double keypoint_l1(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw InvalidArgument("keypoint_l1: shape mismatch");
    }
    if (pred.rows() == 0) throw InvalidArgument("keypoint_l1: no keypoints");
    return (pred - target).cwiseAbs().sum() / static_cast<double>(pred.rows());
}

namespace nn {

Tensor transform_keypoints(const Tensor& rot, const Tensor& tr, const Tensor& delta, const Eigen::MatrixXd& xc) {
    const int b = rot.dim(0);
    const int k = static_cast<int>(xc.rows());
    if (rot.rank() != 2 || rot.dim(1) != 3 || tr.rank() != 2 || tr.dim(0) != b || tr.dim(1) != 3 ||
        delta.rank() != 2 || delta.dim(0) != b || delta.dim(1) != 3 * k || xc.cols() != 3) {
        throw InvalidArgument("nn::transform_keypoints: expected rot [B,3], tr [B,3], delta [B,3K], xc K x 3");
    }
    std::vector<double> out(static_cast<std::size_t>(b) * 3 * k);
    std::vector<Eigen::Matrix3d> rs(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        const Eigen::Vector3d angles(rot.at(3 * i), rot.at(3 * i + 1), rot.at(3 * i + 2));
        rs[static_cast<std::size_t>(i)] = euler_to_rotation(angles);
        for (int p = 0; p < k; ++p) {
            const Eigen::Vector3d x = rs[static_cast<std::size_t>(i)] * xc.row(p).transpose();
            for (int a = 0; a < 3; ++a) {
                const std::size_t o = static_cast<std::size_t>(i) * 3 * k + 3 * p + a;
                out[o] = x[a] + tr.at(3 * i + a) + delta.at(o);
            }
        }
    }
    Node* pr = &rot.node();
    Node* pt = &tr.node();
    Node* pd = &delta.node();
    return make_op({b, 3 * k}, std::move(out), {rot, tr, delta}, [pr, pt, pd, b, k, xc](Node& self) {
        for (int i = 0; i < b; ++i) {
            const double* g = self.grad.data() + static_cast<std::size_t>(i) * 3 * k;
            if (pr->requires_grad) {
                const Eigen::Vector3d angles(pr->value[3 * i], pr->value[3 * i + 1], pr->value[3 * i + 2]);
                const auto d = euler_rotation_derivatives(angles);
                auto& gr = pr->grad_buffer();
                for (int a = 0; a < 3; ++a) {
                    double acc = 0.0;
                    for (int p = 0; p < k; ++p) {
                        const Eigen::Vector3d dx = d[a] * xc.row(p).transpose();
                        acc += g[3 * p] * dx[0] + g[3 * p + 1] * dx[1] + g[3 * p + 2] * dx[2];
                    }
                    gr[3 * i + a] += acc;
                }
            }
            if (pt->requires_grad) {
                auto& gt = pt->grad_buffer();
                for (int p = 0; p < k; ++p)
                    for (int a = 0; a < 3; ++a) gt[3 * i + a] += g[3 * p + a];
            }
            if (pd->requires_grad) {
                auto& gd = pd->grad_buffer();
                for (int j = 0; j < 3 * k; ++j) gd[static_cast<std::size_t>(i) * 3 * k + j] += g[j];
            }
        }
    });
}

Tensor keypoint_l1(const Tensor& pred, const Tensor& target, int k) {
    if (pred.rank() != 2 || pred.shape() != target.shape() || pred.dim(1) != 3 * k) {
        throw InvalidArgument("nn::keypoint_l1: expected matching [B, 3K] tensors");
    }
    return scale(sum(abs(sub(pred, target))), 1.0 / (static_cast<double>(pred.dim(0)) * k));
}

}  // namespace nn

MappingNet::MappingNet(const MapperConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.channels <= 0 || cfg.num_keypoints <= 0) throw InvalidArgument("MappingNet: bad configuration");
    Rng rng(seed);
    const nn::Conv2dSpec valid{};
    c1_ = nn::make_conv2d(params_, "mapper.conv1", kMotionDim, cfg.channels, 1, 3, valid, rng);
    c2_ = nn::make_conv2d(params_, "mapper.conv2", cfg.channels, cfg.channels, 1, 3, valid, rng);
    c3_ = nn::make_conv2d(params_, "mapper.conv3", cfg.channels, cfg.channels, 1, 1, valid, rng);
    rot_ = nn::make_linear(params_, "mapper.head_rot", cfg.channels, 3, rng);
    tr_ = nn::make_linear(params_, "mapper.head_tr", cfg.channels, 3, rng);
    delta_ = nn::make_linear(params_, "mapper.head_delta", cfg.channels, 3 * cfg.num_keypoints, rng);
}

MappingNet::Output MappingNet::forward(const nn::Tensor& input) const {
    if (input.rank() != 4 || input.dim(1) != kMotionDim || input.dim(2) != 1 || input.dim(3) != kCoeffWindowFrames) {
        throw InvalidArgument("MappingNet: input must be [B, 70, 1, 5], got " + nn::shape_string(input.shape()));
    }
    nn::Tensor h = nn::relu(c1_(input));
    h = nn::relu(c2_(h));
    h = nn::relu(c3_(h));
    h = nn::reshape(h, {input.dim(0), cfg_.channels});
    return Output{rot_(h), tr_(h), delta_(h)};
}

nn::Tensor stack_mapper_inputs(std::span<const CoeffWindow> windows) {
    std::vector<double> data;
    data.reserve(windows.size() * kMotionDim * kCoeffWindowFrames);
    for (const auto& w : windows) {
        const auto in = mapper_input(w);
        data.insert(data.end(), in.begin(), in.end());
    }
    return nn::Tensor::constant({static_cast<int>(windows.size()), kMotionDim, 1, kCoeffWindowFrames}, std::move(data));
}

KeypointMotion MappingNet::predict(const CoeffWindow& w) const {
    nn::NoGradGuard guard;
    const Output o = forward(stack_mapper_inputs(std::span<const CoeffWindow>(&w, 1)));
    KeypointMotion m = KeypointMotion::zero(cfg_.num_keypoints);
    for (int a = 0; a < 3; ++a) {
        m.rot[a] = o.rot.at(a);
        m.tr[a] = o.tr.at(a);
    }
    for (int p = 0; p < cfg_.num_keypoints; ++p)
        for (int a = 0; a < 3; ++a) m.delta(p, a) = o.delta.at(3 * p + a);
    return m;
}

std::vector<KeypointMotion> MappingNet::predict_sequence(const MotionSequence& seq) const {
    std::vector<KeypointMotion> out;
    out.reserve(static_cast<std::size_t>(seq.rows()));
    for (int t = 0; t < seq.rows(); ++t) out.push_back(predict(coeff_window(seq, t)));
    return out;
}

void MappingNet::zero_heads() {
    for (auto* l : {&rot_, &tr_, &delta_}) {
        auto w = l->w.mutable_data();
        std::fill(w.begin(), w.end(), 0.0);
        auto b = l->b.mutable_data();
        std::fill(b.begin(), b.end(), 0.0);
    }
}

// ---- trace maps ---------------------------------------------------------------------------

TraceMap trace_map(std::span<const Eigen::MatrixXd> traces, const TraceOptions& opt) {
    if (traces.empty()) throw EmptyInput("trace_map: no frames");
    if (opt.size < 8) throw InvalidArgument("trace_map: image too small");
    const Eigen::Index points = traces.front().rows();
    if (points == 0) throw EmptyInput("trace_map: no points");
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (const auto& f : traces) {
        if (f.rows() != points || f.cols() != 2) throw InvalidArgument("trace_map: every frame must be points x 2");
        min_x = std::min(min_x, f.col(0).minCoeff());
        max_x = std::max(max_x, f.col(0).maxCoeff());
        min_y = std::min(min_y, f.col(1).minCoeff());
        max_y = std::max(max_y, f.col(1).maxCoeff());
    }
    TraceMap map{Image(opt.size, opt.size, {255, 255, 255}), {}, opt.scale, opt.center_x, opt.center_y};
    if (opt.scale <= 0.0) {
        const double extent = std::max({max_x - min_x, max_y - min_y, 1e-9});
        map.scale = 0.9 * (opt.size - 1) / extent;
        map.center_x = 0.5 * (min_x + max_x);
        map.center_y = 0.5 * (min_y + max_y);
    }
    static constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette{{
        {{200, 30, 30}}, {{30, 120, 200}}, {{30, 160, 60}}, {{220, 140, 20}}, {{140, 50, 170}}, {{20, 20, 20}},
    }};
    std::ostringstream csv;
    csv << "frame,point,x,y\n";
    const double half = 0.5 * (opt.size - 1);
    for (std::size_t f = 0; f < traces.size(); ++f) {
        for (Eigen::Index p = 0; p < points; ++p) {
            const double x = traces[f](p, 0), y = traces[f](p, 1);
            const int px = static_cast<int>(std::lround(half + map.scale * (x - map.center_x)));
            const int py = static_cast<int>(std::lround(half - map.scale * (y - map.center_y)));
            map.image.set(px, py, kPalette[static_cast<std::size_t>(p) % kPalette.size()]);
            csv << f << ',' << p << ',' << format_double(x) << ',' << format_double(y) << '\n';
        }
    }
    map.csv = csv.str();
    return map;
}

void write_trace_map(const TraceMap& map, const std::filesystem::path& ppm, const std::filesystem::path& csv) {
    write_ppm(ppm, map.image);
    write_text_file(csv, map.csv);
}

}  // namespace sadcoeff
