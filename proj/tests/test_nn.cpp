#include "doctest.h"

#include "sadcoeff/nn.hpp"
#include "sadcoeff/rng.hpp"

#include <cmath>

using namespace sadcoeff;
using namespace sadcoeff::nn;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

// Direct convolution: out[n,o,y,x] = b[o] + sum_{c,i,j} w[o,c,i,j] * x[n,c,y*s+i-p, x*s+j-p].
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dSpec& s, int oh, int ow) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    std::vector<double> out(static_cast<std::size_t>(n * o * oh * ow));
    for (int in = 0; in < n; ++in)
        for (int io = 0; io < o; ++io)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    double acc = b.at(static_cast<std::size_t>(io));
                    for (int ic = 0; ic < c; ++ic)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                const int sy = y * s.stride_h + i - s.pad_h, sx = xx * s.stride_w + j - s.pad_w;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                                acc += w.at(static_cast<std::size_t>(((io * c + ic) * kh + i) * kw + j)) *
                                       x.at(static_cast<std::size_t>(((in * c + ic) * h + sy) * wd + sx));
                            }
                    out[static_cast<std::size_t>(((in * o + io) * oh + y) * ow + xx)] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop") {
    Rng rng(1);
    const Tensor x = Tensor::constant({2, 3, 7, 9}, randn(2 * 3 * 7 * 9, rng));
    const Tensor w = Tensor::constant({4, 3, 3, 2}, randn(4 * 3 * 3 * 2, rng));
    const Tensor b = Tensor::constant({4}, randn(4, rng));
    const Conv2dSpec s{2, 1, 1, 0};
    const Tensor y = conv2d(x, w, b, s);
    REQUIRE(y.shape() == Shape{2, 4, 4, 8});
    const auto want = conv_oracle(x, w, b, s, 4, 8);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(y.at(i) == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("soft cross entropy matches sum -p log q") {
    Rng rng(2);
    const auto pv = randn(3 * 5, rng), tv = randn(3 * 5, rng);
    const Tensor ce = soft_cross_entropy(Tensor::constant({3, 5}, pv), Tensor::constant({3, 5}, tv));
    double want = 0.0;
    for (int r = 0; r < 3; ++r) {
        double zp = 0.0, zt = 0.0;
        for (int k = 0; k < 5; ++k) zp += std::exp(pv[r * 5 + k]), zt += std::exp(tv[r * 5 + k]);
        for (int k = 0; k < 5; ++k) want -= std::exp(tv[r * 5 + k]) / zt * std::log(std::exp(pv[r * 5 + k]) / zp);
    }
    CHECK(ce.item() == doctest::Approx(want / 3.0).epsilon(1e-10));
}

TEST_CASE("gradient check passes on a small network") {
    Rng rng(3);
    ParamSet ps;
    const Linear l1 = make_linear(ps, "l1", 4, 6, rng);
    const Linear l2 = make_linear(ps, "l2", 6, 2, rng);
    const Tensor x = Tensor::constant({5, 4}, randn(20, rng));
    const Tensor t = Tensor::constant({5, 2}, randn(10, rng));
    const auto loss = [&] { return mean(square(sub(l2(tanh(l1(x))), t))); };
    GradCheckOptions opt;
    for (const auto& r : gradient_check(ps, loss, opt)) {
        CHECK(r.rel_error < 1e-6);
        CHECK(r.checked > 0);
    }
    opt.corrupt_group = "l1.weight";
    opt.corrupt_factor = 1.5;
    bool caught = false;
    for (const auto& r : gradient_check(ps, loss, opt)) caught = caught || (r.name == "l1.weight" && r.rel_error > 0.1);
    CHECK(caught);
}

TEST_CASE("kink screen drops entries sitting on a relu kink") {
    ParamSet ps;
    Tensor& p = ps.add("p", {3}, {3e-6, 1.0, -2.0});  // first entry within h of the kink
    const auto loss = [&] { return sum(relu(p)); };
    GradCheckOptions opt;
    opt.kink_screen = true;
    const auto r = gradient_check(ps, loss, opt);
    REQUIRE(r.size() == 1);
    CHECK(r[0].kinks == 1);
    CHECK(r[0].checked == 2);
    CHECK(r[0].rel_error < 1e-9);
}

TEST_CASE("Adam first step moves by lr against the gradient sign") {
    ParamSet ps;
    ps.add("w", {2}, {0.5, -0.25});
    Adam opt(ps, AdamConfig{0.125});
    ps.zero_grad();
    backward(sum(mul(ps.get("w"), Tensor::constant({2}, {3.0, -2.0}))));
    opt.step(ps);
    CHECK(ps.get("w").at(0) == doctest::Approx(0.5 - 0.125).epsilon(1e-6));
    CHECK(ps.get("w").at(1) == doctest::Approx(-0.25 + 0.125).epsilon(1e-6));
    CHECK(opt.steps() == 1);
}

TEST_CASE("float32 rounding") {
    CHECK(to_f32(0.1) == static_cast<double>(0.1f));
    CHECK(to_f32(1.0) == 1.0);
}

TEST_CASE("ParamSet flatten and manifest") {
    Rng rng(4);
    ParamSet a;
    make_linear(a, "x", 3, 2, rng);
    const auto flat = a.flatten();
    CHECK(flat.size() == a.total_size());
    ParamSet b;
    Rng rng2(99);
    make_linear(b, "x", 3, 2, rng2);
    b.load_flat(flat);
    CHECK(b.flatten() == flat);
    CHECK_NOTHROW(b.check_manifest(a.manifest()));
    ParamSet c;
    make_linear(c, "y", 3, 2, rng2);
    CHECK_THROWS(c.check_manifest(a.manifest()));
}
