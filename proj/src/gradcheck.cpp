#include "gttdi/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace gttdi {

namespace {

double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& x : inputs) vars.push_back(tape.leaf(x, false));
    Var y = f(tape, vars);
    if (y.value().numel() != 1) {
        throw std::invalid_argument("finite_difference_check: function output is not scalar, got " +
                                    shape_str(y.value().shape));
    }
    return y.value().data[0];
}

} // namespace

GradCheckReport finite_difference_check(const ScalarFn& f, std::vector<Tensor> inputs,
                                        double step) {
    // Analytic pass.
    std::vector<Tensor> grads;
    {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(inputs.size());
        for (const Tensor& x : inputs) vars.push_back(tape.leaf(x, true));
        Var y = f(tape, vars);
        tape.backward(y);
        for (Var& v : vars) {
            const Tape::Node& n = tape.node(v.id());
            grads.push_back(n.has_grad ? n.grad : Tensor(n.value.shape, 0.0));
        }
    }

    GradCheckReport rep;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (long long c = 0; c < inputs[i].numel(); ++c) {
            const double keep = inputs[i].data[c];
            inputs[i].data[c] = keep + step;
            const double fp = eval_scalar(f, inputs);
            inputs[i].data[c] = keep - step;
            const double fm = eval_scalar(f, inputs);
            inputs[i].data[c] = keep;

            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = grads[i].data[c];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-12});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_input = i;
                rep.worst_coord = c;
                rep.analytic = analytic;
                rep.numeric = numeric;
            }
        }
    }
    return rep;
}

} // namespace gttdi
