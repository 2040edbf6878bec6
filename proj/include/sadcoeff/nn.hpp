#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors,
// plus the layer, parameter-set, optimizer and gradient-check utilities that
// the three networks share.
//
// Tensors are row-major. Every op records its parents and a backward closure
// when at least one input requires a gradient; `backward(loss)` runs the
// closures in reverse topological order and accumulates into `grad`.

#include "sadcoeff/rng.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sadcoeff::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor scalar(double v);
    static Tensor parameter(Shape shape, std::vector<double> values);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> data() const { return node_->value; }
    std::span<double> mutable_data() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad();

    double item() const;
    double at(std::size_t i) const { return node_->value[i]; }

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// While alive on this thread, ops record no graph (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds an op result; `backward` is kept only when some parent needs grad.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward);

// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
void backward(const Tensor& loss);

// ---- elementwise and reductions -------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);  // zero gradient outside
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Weighted sum of scalars: sum_i w_i * t_i.
Tensor weighted_sum(const std::vector<std::pair<double, Tensor>>& terms);

// ---- shape ------------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
// [N, A, B] -> [N, B, A]
Tensor transpose_last2(const Tensor& a);
// 2-D helpers; all inputs [rows, cols].
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int begin, int count);
Tensor select_cols(const Tensor& a, const std::vector<int>& cols);
Tensor slice_rows(const Tensor& a, int begin, int count);
// Each row repeated `times` consecutively: [n, d] -> [n * times, d].
Tensor repeat_rows(const Tensor& a, int times);
Tensor add_rowvec(const Tensor& a, const Tensor& v);

// ---- linear algebra and layers -----------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);        // [m,k] x [n,k]^T
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x w^T + b

struct Conv2dSpec {
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;
};
// x [N,C,H,W], w [O,C,KH,KW], b [O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dSpec& spec);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// Mean over rows of -sum_k softmax(target)_k * log softmax(pred)_k.
Tensor soft_cross_entropy(const Tensor& pred_logits, const Tensor& target_logits);

// ---- parameters -----------------------------------------------------------------
struct NamedParam {
    std::string name;
    Tensor tensor;
};

class ParamSet {
public:
    Tensor& add(std::string name, Shape shape, std::vector<double> values);
    Tensor& add_uniform(std::string name, Shape shape, double bound, Rng& rng);
    Tensor& add_zeros(std::string name, Shape shape);

    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);

    std::size_t total_size() const;
    void zero_grad();
    std::vector<double> flatten() const;
    void load_flat(std::span<const double> flat);
    std::vector<double> flatten_grad() const;
    // Text manifest: one "name d0xd1x..." line per tensor.
    std::string manifest() const;
    void check_manifest(const std::string& manifest) const;

private:
    std::vector<NamedParam> params_;
};

// Round-to-nearest float32. Parameters and optimizer moments are kept on the
// float32 grid so checkpoints (float32 on disk) restore state exactly.
double to_f32(double v);
void round_to_f32(std::span<double> values);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(const ParamSet& params, AdamConfig config);
    void step(ParamSet& params);

    long steps() const { return t_; }
    const std::vector<double>& first_moment() const { return m_; }
    const std::vector<double>& second_moment() const { return v_; }
    void restore(long steps, std::vector<double> m, std::vector<double> v);
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    long t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

// ---- finite-difference gradient check ------------------------------------------
struct GradGroupReport {
    std::string name;
    std::size_t checked = 0;
    double max_abs_error = 0.0;
    double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    std::size_t kinks = 0;   // entries dropped by the kink screen
};

struct GradCheckOptions {
    double h = 1e-5;
    std::size_t max_entries_per_group = 0;  // 0 = every entry
    std::uint64_t sample_seed = 0;
    // Test hook: scales the analytic gradient of this group (negative control).
    std::string corrupt_group;
    double corrupt_factor = 1.0;
    // Drop entries whose central differences at h and h/2 disagree by more
    // than kink_tolerance (relative): the +-h interval straddles a ReLU or
    // |x| kink, where no finite difference is meaningful.
    bool kink_screen = false;
    double kink_tolerance = 1e-4;
};

// `loss_fn` must rebuild the graph from the current parameter values.
std::vector<GradGroupReport> gradient_check(ParamSet& params, const std::function<Tensor()>& loss_fn,
                                            const GradCheckOptions& options);

// ---- layers ------------------------------------------------------------------------
struct Linear {
    Tensor w;  // [out, in]
    Tensor b;  // [out]
    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
    int in_features() const { return w.dim(1); }
    int out_features() const { return w.dim(0); }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
Linear make_linear(ParamSet& params, const std::string& name, int in, int out, Rng& rng);

struct Conv2d {
    Tensor w;  // [O, C, KH, KW]
    Tensor b;  // [O]
    Conv2dSpec spec;
    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, spec); }
};

Conv2d make_conv2d(ParamSet& params, const std::string& name, int in_ch, int out_ch, int kh, int kw,
                   Conv2dSpec spec, Rng& rng);

}  // namespace sadcoeff::nn
