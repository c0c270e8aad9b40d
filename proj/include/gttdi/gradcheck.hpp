#pragma once

#include "gttdi/tensor.hpp"

#include <functional>
#include <vector>

namespace gttdi {

// Scalar-valued function of several tensor inputs, rebuilt on a fresh tape
// per evaluation. The function must be deterministic: if it uses dropout or
// other sampled state, it has to reseed identically on every call.
using ScalarFn = std::function<Var(Tape&, std::vector<Var>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t worst_input = 0;   // which tensor
    long long worst_coord = 0; // flat index within it
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares reverse-mode gradients against central differences
//   (f(x + h) - f(x - h)) / 2h
// coordinate by coordinate, reporting the largest relative error
//   |a - c| / max(|a|, |c|, 1e-12).
GradCheckReport finite_difference_check(const ScalarFn& f, std::vector<Tensor> inputs,
                                        double step = 1e-5);

} // namespace gttdi
