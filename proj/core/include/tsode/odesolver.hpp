#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tsode/tensor.hpp"

namespace tsode {

enum class SolverMethod { euler, rk4 };
enum class GradientMode { discretize, adjoint };

std::string to_string(SolverMethod method);
std::string to_string(GradientMode mode);
SolverMethod solver_method_from_string(const std::string& name);
GradientMode gradient_mode_from_string(const std::string& name);

/**
 * Fixed-step solver configuration. step_size is in series time units; each
 * grid interval is integrated with ceil(gap / step_size) uniform internal
 * steps. gradient_mode picks how gradients reach y0 and the parameters:
 * discretize backpropagates through every internal step recorded on the
 * graph; adjoint treats the solve as a black box and integrates an adjoint
 * state backward on the same step layout.
 */
struct SolverSpec {
    SolverMethod method = SolverMethod::rk4;
    double step_size = 0.1;
    GradientMode gradient_mode = GradientMode::discretize;
};

/// Right-hand side dy/dt = fn(y, t), with the parameter tensors the adjoint
/// pass needs to differentiate against. fn must return a tensor of y's shape.
struct OdeFunc {
    std::function<Tensor(const Tensor& y, double t)> fn;
    std::vector<Tensor> params;

    Tensor operator()(const Tensor& y, double t) const { return fn(y, t); }
};

/**
 * Integrate an initial value problem over a strictly increasing time grid.
 *
 * Returns one state per grid time; the first returned tensor is y0 itself.
 * Throws ValidationError for a non-increasing grid and DivergenceError
 * (naming the time reached) if the state goes non-finite.
 */
std::vector<Tensor> solve(const OdeFunc& f, const Tensor& y0, std::span<const double> t_grid,
                          const SolverSpec& spec);

struct AdjointResult {
    std::vector<double> y0_grad;
    std::vector<std::vector<double>> param_grads; // aligned with OdeFunc::params
};

/**
 * Loss gradients w.r.t. y0 and parameters via backward adjoint integration.
 *
 * loss_grads holds dL/dy(t_i) for every grid point (same grid as the forward
 * solve; ContractError otherwise). The augmented state (y, adjoint, parameter
 * accumulator) is integrated backward interval by interval with the grads
 * injected at the grid times; no forward graph is retained.
 */
AdjointResult grad_adjoint(const OdeFunc& f, const Tensor& y0, std::span<const double> t_grid,
                           std::span<const std::vector<double>> loss_grads,
                           const SolverSpec& spec);

/// Closed-form scalar test problem for solver validation.
struct ScalarOdeProblem {
    std::function<double(double y, double t)> f;
    std::function<double(double t)> exact; // y(t) with the problem's y(0)
    double y0 = 1.0;
    double t_end = 1.0;
};

/// Measured convergence order: least-squares slope of log(endpoint error)
/// against log(step) over steps {0.1, 0.05, 0.025, 0.0125}.
double convergence_order(SolverMethod method, const ScalarOdeProblem& problem);

} // namespace tsode
