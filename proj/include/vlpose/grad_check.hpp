#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "vlpose/ops.hpp"
#include "vlpose/rng.hpp"

namespace vlpose {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> inputs;
    double max_rel_err = 0.0;
    bool non_finite = false;
    bool passed = false;

    std::string summary() const {
        std::ostringstream os;
        os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err;
        if (non_finite) os << " (non-finite values encountered)";
        for (const auto& e : inputs)
            os << "\n  " << e.name << ": " << e.max_rel_err << " at [" << e.worst_index << "] analytic=" << e.analytic
               << " numeric=" << e.numeric;
        return os.str();
    }
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must rebuild its graph from the given leaves on every call.
/// Relative error per element is |a - n| / max(|a|, |n|, floor).
template <typename T>
GradCheckReport grad_check(const std::function<Var<T>()>& f, const std::vector<std::pair<std::string, Var<T>>>& inputs,
                           double eps = 1e-4, double tol = 1e-3, double floor = 1e-6) {
    if (!(eps >= 1e-4 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must lie in [1e-4, 1e-2]");
    GradCheckReport report;
    for (const auto& [name, leaf] : inputs) {
        if (!leaf.requires_grad()) throw std::invalid_argument("grad_check: input '" + name + "' does not require grad");
        Var<T> v = leaf;
        v.zero_grad();
    }
    Var<T> out = f();
    if (out.numel() != 1) throw DimensionError("grad_check: function must be scalar, got " + shape_str(out.shape()));
    if (!out.value().all_finite()) report.non_finite = true;
    out.backward();

    for (const auto& [name, leaf] : inputs) {
        Var<T> v = leaf;
        Tensor<T> analytic = v.has_grad() ? v.grad() : Tensor<T>(v.shape());
        GradCheckEntry entry{name};
        auto& data = v.mutable_value();
        for (std::size_t i = 0; i < data.numel(); ++i) {
            const T saved = data[i];
            double fp, fm;
            {
                NoGradGuard ng;
                data[i] = saved + T(eps);
                fp = static_cast<double>(f().value()[0]);
                data[i] = saved - T(eps);
                fm = static_cast<double>(f().value()[0]);
            }
            data[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) report.non_finite = true;
            const double num = (fp - fm) / (2.0 * eps);
            const double ana = static_cast<double>(analytic[i]);
            const double denom = std::max({std::abs(ana), std::abs(num), floor});
            const double rel = std::abs(ana - num) / denom;
            if (!(rel <= entry.max_rel_err)) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
                entry.analytic = ana;
                entry.numeric = num;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        if (std::isnan(entry.max_rel_err)) report.non_finite = true;
        report.inputs.push_back(std::move(entry));
        v.zero_grad();
    }
    report.passed = !report.non_finite && report.max_rel_err <= tol;
    return report;
}

/// Random-coefficient scalar probe sum(c * y); plain sums hide errors in ops
/// whose outputs have constant sums (softmax, normalizations).
template <typename T>
Var<T> random_probe(const Var<T>& y, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<T> c(y.shape());
    for (auto& v : c.values()) v = T(rng.uniform(-1.0, 1.0));
    return weighted_sum(y, c);
}

/// Fills a tensor with uniform draws in [lo, hi).
template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = T(rng.uniform(lo, hi));
    return t;
}

}  // namespace vlpose
