#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "swaro/tape.hpp"
#include "swaro/tensor.hpp"

namespace swaro {

/// A scalar-valued tensor function expressed as a tape program: it takes a
/// fresh tape plus the id of the input leaf and returns the id of a scalar
/// output node.
using ScalarFn = std::function<Tape::Id(Tape&, Tape::Id)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const ScalarFn& f, const Tensor& point, double step) {
    if (step <= 0.0) throw std::invalid_argument("grad_check: step must be > 0");

    Tape tape;
    Tape::Id x = tape.input(point);
    Tape::Id out = f(tape, x);
    Tensor analytic = tape.backward(out)[x];

    auto eval = [&](const Tensor& p) {
        Tape t;
        Tape::Id xi = t.input(p);
        double v = t.value(f(t, xi)).item();
        if (!std::isfinite(v))
            throw std::runtime_error("grad_check: non-finite function value");
        return v;
    };

    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + step;
        double fp = eval(probe);
        probe[i] = point[i] - step;
        double fm = eval(probe);
        probe[i] = point[i];
        double numeric = (fp - fm) / (2.0 * step);
        if (!std::isfinite(numeric))
            throw std::runtime_error("grad_check: non-finite difference at coordinate " +
                                     std::to_string(i));
        double err = std::fabs(analytic[i] - numeric) /
                     std::max(1.0, std::fabs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace swaro
