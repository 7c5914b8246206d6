#include <gtest/gtest.h>

#include <cmath>

#include "common.hpp"
#include "ento/grad_check.hpp"
#include "ento/losses.hpp"

using namespace ento;
using testing_util::random_mask;
using testing_util::random_tensor;

namespace {

Tensor<double> saturated(const Tensor<double>& y, double mag = 20.0) {
    Tensor<double> z(y.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = y[i] == 1.0 ? mag : -mag;
    return z;
}

double sigmoid_ref(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Direct per-pixel sums in the plain sigma-then-log form.
double wbce_oracle(const Tensor<double>& z, const Tensor<double>& y, const Tensor<double>& w) {
    const std::size_t n = z.shape().n, per = z.numel() / n;
    double total = 0;
    for (std::size_t b = 0; b < n; ++b) {
        double num = 0, den = 0;
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            const double p = sigmoid_ref(z[i]);
            num += w[i] * -(y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p));
            den += w[i];
        }
        total += num / den;
    }
    return total / n;
}

double wiou_oracle(const Tensor<double>& z, const Tensor<double>& y, const Tensor<double>& w, double smooth = 1.0) {
    const std::size_t n = z.shape().n, per = z.numel() / n;
    double total = 0;
    for (std::size_t b = 0; b < n; ++b) {
        double inter = 0, uni = 0;
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            const double p = sigmoid_ref(z[i]);
            inter += w[i] * p * y[i];
            uni += w[i] * (p + y[i] - p * y[i]);
        }
        total += 1 - (inter + smooth) / (uni + smooth);
    }
    return total / n;
}

double eval_wbce(const Tensor<double>& z, const Tensor<double>& y, const Tensor<double>& w) {
    Tape<double> t;
    return wbce(t.constant(z), y, w).value()[0];
}

double eval_wiou(const Tensor<double>& z, const Tensor<double>& y, const Tensor<double>& w, const LossOptions& o = {}) {
    Tape<double> t;
    return wiou(t.constant(z), y, w, o).value()[0];
}

} // namespace

TEST(PixelWeights, AllZeroMaskGivesOnes) {
    Tensor<double> y(Shape{1, 1, 20, 20});
    for (double v : pixel_weights(y).data()) EXPECT_EQ(v, 1.0);
}

TEST(PixelWeights, InteriorOfLargeRegionIsOne) {
    Tensor<double> y(Shape{1, 1, 64, 64}, 0.0);
    for (std::size_t r = 0; r < 64; ++r) {
        for (std::size_t c = 0; c < 40; ++c) y.at(0, 0, r, c) = 1.0;
    }
    // Pixel (32, 17): the 31x31 window spans columns 2..32 and rows 17..47, all foreground.
    EXPECT_EQ(pixel_weights(y).at(0, 0, 32, 17), 1.0);
}

TEST(PixelWeights, SinglePixelCentre) {
    Tensor<double> y(Shape{1, 1, 33, 33}, 0.0);
    y.at(0, 0, 16, 16) = 1.0;
    EXPECT_NEAR(pixel_weights(y).at(0, 0, 16, 16), 1.0 + 5.0 * (1.0 - 1.0 / 961.0), 1e-12);
}

TEST(PixelWeights, RejectsNonBinary) {
    Tensor<double> y(Shape{1, 1, 4, 4}, 0.5);
    EXPECT_THROW(pixel_weights(y), InvalidArgument);
    EXPECT_THROW(pixel_weights(Tensor<double>(Shape{1, 2, 4, 4})), ShapeError);
}

TEST(Wbce, SaturatedCorrectIsNearZero) {
    auto y = random_mask(16, 16, 1);
    EXPECT_LT(eval_wbce(saturated(y), y, pixel_weights(y)), 1e-6);
}

TEST(Wbce, ZeroLogitsGiveLn2ForAnyWeights) {
    auto y = random_mask(8, 8, 2);
    auto w = random_tensor<double>(y.shape(), 3, 0.1, 9.0);
    EXPECT_NEAR(eval_wbce(Tensor<double>(y.shape()), y, w), std::log(2.0), 1e-12);
}

TEST(Wbce, MatchesDirectSummation) {
    Tensor<double> y(Shape{3, 1, 9, 7});
    for (std::size_t b = 0; b < 3; ++b) {
        auto m = random_mask(9, 7, 10 + b);
        std::copy(m.data().begin(), m.data().end(), y.plane(b, 0));
    }
    auto z = random_tensor<double>(y.shape(), 4, -6, 6);
    auto w = pixel_weights(y);
    EXPECT_NEAR(eval_wbce(z, y, w), wbce_oracle(z, y, w), 1e-12);
}

TEST(Wbce, StableAtExtremeLogits) {
    Tensor<double> y(Shape{1, 1, 1, 2}, std::vector<double>{1.0, 0.0});
    Tensor<double> z(y.shape(), std::vector<double>{-800.0, 800.0});
    Tensor<double> w(y.shape(), 1.0);
    EXPECT_NEAR(eval_wbce(z, y, w), 800.0, 1e-9);
}

TEST(Wiou, SaturatedCorrectIsNearZero) {
    auto y = random_mask(16, 16, 5);
    EXPECT_LT(eval_wiou(saturated(y), y, pixel_weights(y)), 1e-6);
}

TEST(Wiou, DisjointClosedForm) {
    for (std::size_t n : {1u, 4u, 25u, 100u}) {
        Tensor<double> y(Shape{1, 1, 1, n}, 1.0);
        Tensor<double> z(y.shape(), -20.0);
        Tensor<double> w(y.shape(), 1.0);
        EXPECT_NEAR(eval_wiou(z, y, w), 1.0 - 1.0 / (n + 1.0), 1e-6) << n;
    }
}

TEST(Wiou, MatchesDirectSummation) {
    Tensor<double> y(Shape{2, 1, 8, 8});
    for (std::size_t b = 0; b < 2; ++b) {
        auto m = random_mask(8, 8, 20 + b);
        std::copy(m.data().begin(), m.data().end(), y.plane(b, 0));
    }
    auto z = random_tensor<double>(y.shape(), 6, -4, 4);
    auto w = pixel_weights(y);
    EXPECT_NEAR(eval_wiou(z, y, w), wiou_oracle(z, y, w), 1e-12);
}

TEST(Losses, RejectEmptyAndMismatchedInputs) {
    Tape<double> t;
    Tensor<double> e(Shape{0, 1, 1, 1});
    EXPECT_THROW(wbce(t.constant(e), e, e), ShapeError);
    EXPECT_THROW(wiou(t.constant(e), e, e), ShapeError);
    Tensor<double> a(Shape{1, 1, 2, 2}), b(Shape{1, 1, 2, 3});
    EXPECT_THROW(wbce(t.constant(a), b, a), ShapeError);
    EXPECT_THROW(wiou(t.constant(a), a, b), ShapeError);
}

TEST(Losses, InvariantToWeightRescaling) {
    auto y = random_mask(10, 10, 7);
    auto z = random_tensor<double>(y.shape(), 8, -3, 3);
    auto w = pixel_weights(y);
    Tensor<double> w7(w.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) w7[i] = 7.0 * w[i];
    EXPECT_NEAR(eval_wbce(z, y, w), eval_wbce(z, y, w7), 1e-12);
    LossOptions no_smooth;
    no_smooth.iou_smoothing = 0.0;
    EXPECT_NEAR(eval_wiou(z, y, w, no_smooth), eval_wiou(z, y, w7, no_smooth), 1e-12);
}

TEST(Losses, NonNegativeAndIouBelowOne) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto y = random_mask(6, 6, 100 + s, s % 3 == 0 ? 0.0 : 0.5);
        auto z = random_tensor<double>(y.shape(), 200 + s, -30, 30);
        auto w = pixel_weights(y);
        EXPECT_GE(eval_wbce(z, y, w), 0.0);
        const double iou = eval_wiou(z, y, w);
        EXPECT_GE(iou, 0.0);
        EXPECT_LT(iou, 1.0);
    }
}

namespace {

PredictionSet<double> heads(Tape<double>& t, const Tensor<double>& e, const Tensor<double>& b, const Tensor<double>& r) {
    PredictionSet<double> p;
    p.coarse = t.constant(e);
    p.base_per_level = {t.constant(b)};
    p.retouch_per_level = {t.constant(r)};
    return p;
}

} // namespace

TEST(TotalLoss, SaturatedHeadsNearZero) {
    auto y = random_mask(16, 16, 9);
    y.at(0, 0, 0, 0) = 1.0;
    Tape<double> t;
    auto z = saturated(y, 30.0);
    auto out = total_loss(heads(t, z, z, z), y);
    EXPECT_LT(out.total_value(), 1e-5);
}

TEST(TotalLoss, IdenticalHeadsGiveIdenticalTerms) {
    auto y = random_mask(16, 16, 10);
    auto z = random_tensor<double>(Shape{1, 1, 4, 4}, 11, -2, 2);
    Tape<double> t;
    auto c = total_loss(heads(t, z, z, z), y).components();
    EXPECT_EQ(c[0], c[2]);
    EXPECT_EQ(c[2], c[4]);
    EXPECT_EQ(c[1], c[3]);
    EXPECT_EQ(c[3], c[5]);
}

TEST(TotalLoss, SumOfIndependentComponents) {
    auto y = random_mask(16, 16, 12);
    auto w = pixel_weights(y);
    const Tensor<double> zs[3] = {random_tensor<double>(Shape{1, 1, 4, 4}, 13, -3, 3),
                                  random_tensor<double>(Shape{1, 1, 8, 8}, 14, -3, 3),
                                  random_tensor<double>(Shape{1, 1, 16, 16}, 15, -3, 3)};
    Tape<double> t;
    auto out = total_loss(heads(t, zs[0], zs[1], zs[2]), y);
    double expect = 0;
    const auto comps = out.components();
    for (int k = 0; k < 3; ++k) {
        const auto up = kernel::bilinear_resize(zs[k], 16, 16);
        const double bce = wbce_oracle(up, y, w), iou = wiou_oracle(up, y, w);
        EXPECT_NEAR(comps[2 * k], bce, 1e-12);
        EXPECT_NEAR(comps[2 * k + 1], iou, 1e-12);
        expect += bce + iou;
    }
    EXPECT_NEAR(out.total_value(), expect, 1e-6 * expect);
    double s = 0;
    for (double v : comps) s += v;
    EXPECT_NEAR(out.total_value(), s, 1e-6 * s);
}

TEST(TotalLoss, MissingHeadRejected) {
    auto y = random_mask(8, 8, 1);
    Tape<double> t;
    PredictionSet<double> p;
    p.coarse = t.constant(Tensor<double>(Shape{1, 1, 2, 2}));
    EXPECT_THROW(total_loss(p, y), InvalidArgument);
}

TEST(TotalLoss, BatchPermutationEquivariant) {
    Tensor<double> y(Shape{3, 1, 8, 8}), z(Shape{3, 1, 4, 4});
    for (std::size_t b = 0; b < 3; ++b) {
        auto m = random_mask(8, 8, 30 + b);
        auto r = random_tensor<double>(Shape{1, 1, 4, 4}, 40 + b, -3, 3);
        std::copy(m.data().begin(), m.data().end(), y.plane(b, 0));
        std::copy(r.data().begin(), r.data().end(), z.plane(b, 0));
    }
    auto permute = [](const Tensor<double>& x) {
        Tensor<double> out(x.shape());
        const std::size_t per = x.numel() / 3, order[3] = {2, 0, 1};
        for (std::size_t b = 0; b < 3; ++b) std::copy(x.plane(order[b], 0), x.plane(order[b], 0) + per, out.plane(b, 0));
        return out;
    };
    Tape<double> t;
    const double a = total_loss(heads(t, z, z, z), y).total_value();
    const double b = total_loss(heads(t, permute(z), permute(z), permute(z)), permute(y)).total_value();
    EXPECT_NEAR(a, b, 1e-12);
    double single = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        Tensor<double> yk(Shape{1, 1, 8, 8}), zk(Shape{1, 1, 4, 4});
        std::copy(y.plane(k, 0), y.plane(k, 0) + 64, yk.ptr());
        std::copy(z.plane(k, 0), z.plane(k, 0) + 16, zk.ptr());
        single += total_loss(heads(t, zk, zk, zk), yk).total_value() / 3.0;
    }
    EXPECT_NEAR(a, single, 1e-12);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
    auto y = random_mask(16, 16, 50);
    ParamStore<double> p(3);
    p.add("e", Shape{1, 1, 4, 4}, InitSpec::fan_in_uniform(1));
    p.add("b", Shape{1, 1, 8, 8}, InitSpec::fan_in_uniform(1));
    p.add("r", Shape{1, 1, 16, 16}, InitSpec::fan_in_uniform(1));
    GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.samples_per_tensor = 16;
    auto res = grad_check(
        [&](Tape<double>& t, ParamStore<double>& s) {
            PredictionSet<double> ps;
            ps.coarse = t.param(s, "e");
            ps.base_per_level = {t.param(s, "b")};
            ps.retouch_per_level = {t.param(s, "r")};
            return total_loss(ps, y).total;
        },
        p, opt);
    EXPECT_LE(res.max_rel_error, 1e-4) << res.worst_param;
}
