#include <gtest/gtest.h>

#include "grad_suite.hpp"

using namespace vlpose;
using namespace vlpose::testing;

namespace {

const std::vector<GradCase>& cases() {
    static const std::vector<GradCase> c = all_grad_cases();
    return c;
}

class GradSuite : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradSuite, MatchesCentralDifferencesOverFiveSeeds) {
    const GradCase& c = cases()[GetParam()];
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const GradCheckReport r = c.run(seed);
        EXPECT_TRUE(r.passed) << c.name << " seed " << seed << ": " << r.summary();
    }
}

INSTANTIATE_TEST_SUITE_P(All, GradSuite, ::testing::Range<std::size_t>(0, cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                             std::string n = cases()[info.param].name;
                             for (auto& ch : n)
                                 if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                             return n;
                         });

TEST(GradCheck, ReluSumIsExactAwayFromTheKink) {
    Rng rng(7);
    Tensor<D> x = random_tensor<D>({50}, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < x.numel(); i += 2) x[i] = -x[i];
    Var<D> v(x, true);
    const auto r = grad_check<D>([&] { return sum(relu(v)); }, {{"x", v}});
    EXPECT_TRUE(r.passed);
    EXPECT_LT(r.max_rel_err, 1e-6);
}

TEST(GradCheck, RejectsStepOutsideRange) {
    Var<D> v(Tensor<D>({2}, 1.0), true);
    auto f = [&] { return sum(v); };
    EXPECT_THROW(grad_check<D>(f, {{"x", v}}, 1e-5), std::invalid_argument);
    EXPECT_THROW(grad_check<D>(f, {{"x", v}}, 0.1), std::invalid_argument);
    EXPECT_NO_THROW(grad_check<D>(f, {{"x", v}}, 1e-2));
}

TEST(GradCheck, FlagsNonFiniteValues) {
    Var<D> v(Tensor<D>({2}, std::vector<D>{1.0, std::numeric_limits<D>::infinity()}), true);
    const auto r = grad_check<D>([&] { return sum(v); }, {{"x", v}});
    EXPECT_TRUE(r.non_finite);
    EXPECT_FALSE(r.passed);
}

TEST(GradCheck, DetectsAWrongGradient) {
    // A hand-made op whose backward is off by a factor of two.
    Var<D> v(Tensor<D>({3}, 0.5), true);
    auto f = [&] {
        Tensor<D> out({1}, 0.0);
        for (D x : v.value().values()) out[0] += x * x;
        Var<D> src = v;
        return make_result<D>(out, {v}, "bad_square", [src](const Tensor<D>& g) mutable {
            auto& buf = src.node()->grad_buffer();
            for (std::size_t i = 0; i < buf.numel(); ++i) buf[i] += g[0] * 4.0 * src.value()[i];
        });
    };
    const auto r = grad_check<D>(f, {{"x", v}});
    EXPECT_FALSE(r.passed);
    EXPECT_NEAR(r.max_rel_err, 0.5, 1e-6);
}

}  // namespace
