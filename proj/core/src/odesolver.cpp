#include "tsode/odesolver.hpp"

#include <algorithm>
#include <cmath>

namespace tsode {

std::string to_string(SolverMethod method) {
    return method == SolverMethod::euler ? "euler" : "rk4";
}

std::string to_string(GradientMode mode) {
    return mode == GradientMode::discretize ? "discretize" : "adjoint";
}

SolverMethod solver_method_from_string(const std::string& name) {
    if (name == "euler") return SolverMethod::euler;
    if (name == "rk4") return SolverMethod::rk4;
    throw ConfigError("unknown solver method '" + name + "' (expected euler or rk4)");
}

GradientMode gradient_mode_from_string(const std::string& name) {
    if (name == "discretize") return GradientMode::discretize;
    if (name == "adjoint") return GradientMode::adjoint;
    throw ConfigError("unknown gradient mode '" + name + "' (expected discretize or adjoint)");
}

namespace {

void check_grid(std::span<const double> t_grid) {
    if (t_grid.empty()) throw ValidationError("solve: empty time grid");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (t_grid[i] <= t_grid[i - 1])
            throw ValidationError("solve: time grid not strictly increasing at index " +
                                  std::to_string(i));
}

std::size_t internal_steps(double gap, double step_size) {
    if (step_size <= 0.0) throw ValidationError("solve: step_size must be positive");
    const auto n = static_cast<std::size_t>(std::ceil(gap / step_size - 1e-12));
    return std::max<std::size_t>(n, 1);
}

Tensor advance(const OdeFunc& f, const Tensor& y, double t, double h, SolverMethod method) {
    if (method == SolverMethod::euler) {
        return add(y, scale(f(y, t), h));
    }
    // classic RK4
    Tensor k1 = f(y, t);
    Tensor k2 = f(add(y, scale(k1, h / 2.0)), t + h / 2.0);
    Tensor k3 = f(add(y, scale(k2, h / 2.0)), t + h / 2.0);
    Tensor k4 = f(add(y, scale(k3, h)), t + h);
    Tensor combined = add(add(k1, k4), scale(add(k2, k3), 2.0));
    return add(y, scale(combined, h / 6.0));
}

void check_state(const Tensor& y, double t) {
    if (!all_finite(y.values()))
        throw DivergenceError("solve: non-finite state at t=" + std::to_string(t));
}

/// Forward integration on raw values only (no recording), returning the
/// state at every grid time.
std::vector<std::vector<double>> solve_values(const OdeFunc& f, std::span<const double> y0,
                                              std::span<const double> t_grid,
                                              const SolverSpec& spec) {
    NoGradScope no_recording;
    std::vector<std::vector<double>> out;
    out.reserve(t_grid.size());
    out.emplace_back(y0.begin(), y0.end());
    Tensor y = Tensor::from_span(y0);
    for (std::size_t i = 0; i + 1 < t_grid.size(); ++i) {
        const double gap = t_grid[i + 1] - t_grid[i];
        const std::size_t n = internal_steps(gap, spec.step_size);
        const double h = gap / static_cast<double>(n);
        double t = t_grid[i];
        for (std::size_t k = 0; k < n; ++k) {
            y = advance(f, y, t, h, spec.method);
            t += h;
            check_state(y, t);
        }
        auto yv = y.values();
        out.emplace_back(yv.begin(), yv.end());
    }
    return out;
}

/// One vector-Jacobian product of f at (y, t) with cotangent a: returns
/// f(y, t) values, -a^T df/dy, and -a^T df/dtheta for every parameter.
/// Parameter grad buffers are used as scratch; the caller owns save/restore.
struct AugmentedDerivative {
    std::vector<double> dy;
    std::vector<double> da;
    std::vector<std::vector<double>> dparams;
};

AugmentedDerivative augmented_derivative(const OdeFunc& f, std::span<const double> y_vals,
                                         std::span<const double> a_vals, double t) {
    for (const Tensor& p : f.params) p.impl()->grad.clear();
    Graph graph;
    AugmentedDerivative result;
    {
        auto scope = graph.activate();
        Tensor y = Tensor::from_span(y_vals, /*requires_grad=*/true);
        Tensor fy = f(y, t);
        Tensor a = Tensor::from_span(a_vals);
        Tensor proj = dot(fy, a);
        graph.backward(proj);
        auto fv = fy.values();
        result.dy.assign(fv.begin(), fv.end());
        result.da = y.grad_or_zeros();
        for (double& g : result.da) g = -g;
        result.dparams.reserve(f.params.size());
        for (const Tensor& p : f.params) {
            std::vector<double> pg = p.grad_or_zeros();
            for (double& g : pg) g = -g;
            result.dparams.push_back(std::move(pg));
        }
    }
    for (const Tensor& p : f.params) p.impl()->grad.clear();
    return result;
}

void axpy(std::vector<double>& y, double alpha, std::span<const double> x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

struct AugmentedState {
    std::vector<double> y;
    std::vector<double> a;
    std::vector<std::vector<double>> theta;

    void saxpy(double alpha, const AugmentedDerivative& d) {
        axpy(y, alpha, d.dy);
        axpy(a, alpha, d.da);
        for (std::size_t j = 0; j < theta.size(); ++j) axpy(theta[j], alpha, d.dparams[j]);
    }
};

AugmentedDerivative eval_at(const OdeFunc& f, const AugmentedState& base,
                            const AugmentedDerivative* dir, double alpha, double t) {
    if (dir == nullptr) return augmented_derivative(f, base.y, base.a, t);
    std::vector<double> y = base.y;
    std::vector<double> a = base.a;
    axpy(y, alpha, dir->dy);
    axpy(a, alpha, dir->da);
    return augmented_derivative(f, y, a, t);
}

/// One backward step of the augmented system from t to t + h (h < 0).
void advance_augmented(const OdeFunc& f, AugmentedState& state, double t, double h,
                       SolverMethod method) {
    if (method == SolverMethod::euler) {
        const AugmentedDerivative k1 = augmented_derivative(f, state.y, state.a, t);
        state.saxpy(h, k1);
        return;
    }
    const AugmentedDerivative k1 = eval_at(f, state, nullptr, 0.0, t);
    const AugmentedDerivative k2 = eval_at(f, state, &k1, h / 2.0, t + h / 2.0);
    const AugmentedDerivative k3 = eval_at(f, state, &k2, h / 2.0, t + h / 2.0);
    const AugmentedDerivative k4 = eval_at(f, state, &k3, h, t + h);
    state.saxpy(h / 6.0, k1);
    state.saxpy(h / 3.0, k2);
    state.saxpy(h / 3.0, k3);
    state.saxpy(h / 6.0, k4);
}

AdjointResult run_adjoint(const OdeFunc& f, std::span<const double> t_grid,
                          std::span<const std::vector<double>> loss_grads,
                          const std::vector<std::vector<double>>& trajectory,
                          const SolverSpec& spec) {
    // Parameter grads double as VJP scratch inside augmented_derivative, so
    // stash whatever an enclosing backward pass has accumulated.
    std::vector<std::vector<double>> saved;
    saved.reserve(f.params.size());
    for (const Tensor& p : f.params) {
        saved.push_back(std::move(p.impl()->grad));
        p.impl()->grad.clear();
    }

    const std::size_t n_grid = t_grid.size();
    AugmentedState state;
    state.y = trajectory.back();
    state.a = loss_grads[n_grid - 1];
    state.theta.assign(f.params.size(), {});
    for (std::size_t j = 0; j < f.params.size(); ++j)
        state.theta[j].assign(f.params[j].size(), 0.0);

    for (std::size_t i = n_grid - 1; i > 0; --i) {
        const double gap = t_grid[i] - t_grid[i - 1];
        const std::size_t n = internal_steps(gap, spec.step_size);
        const double h = -gap / static_cast<double>(n);
        double t = t_grid[i];
        for (std::size_t k = 0; k < n; ++k) {
            advance_augmented(f, state, t, h, spec.method);
            t += h;
        }
        // Reset y to the stored forward state so backward reconstruction
        // error does not compound across intervals.
        state.y = trajectory[i - 1];
        for (std::size_t j = 0; j < state.a.size(); ++j) state.a[j] += loss_grads[i - 1][j];
    }

    for (std::size_t j = 0; j < f.params.size(); ++j) f.params[j].impl()->grad = std::move(saved[j]);

    AdjointResult result;
    result.y0_grad = std::move(state.a);
    result.param_grads = std::move(state.theta);
    return result;
}

} // namespace

std::vector<Tensor> solve(const OdeFunc& f, const Tensor& y0, std::span<const double> t_grid,
                          const SolverSpec& spec) {
    check_grid(t_grid);
    if (spec.gradient_mode == GradientMode::discretize) {
        std::vector<Tensor> out;
        out.reserve(t_grid.size());
        out.push_back(y0);
        Tensor y = y0;
        for (std::size_t i = 0; i + 1 < t_grid.size(); ++i) {
            const double gap = t_grid[i + 1] - t_grid[i];
            const std::size_t n = internal_steps(gap, spec.step_size);
            const double h = gap / static_cast<double>(n);
            double t = t_grid[i];
            for (std::size_t k = 0; k < n; ++k) {
                y = advance(f, y, t, h, spec.method);
                t += h;
                check_state(y, t);
            }
            out.push_back(y);
        }
        return out;
    }

    // Adjoint mode: plain-value forward pass plus one recorded step whose
    // backward runs the adjoint integration.
    const std::vector<std::vector<double>> trajectory =
        solve_values(f, y0.values(), t_grid, spec);

    std::vector<Tensor> out;
    out.reserve(t_grid.size());
    out.push_back(y0);
    bool needs_grad = y0.requires_grad();
    for (const Tensor& p : f.params) needs_grad = needs_grad || p.requires_grad();
    needs_grad = needs_grad && Graph::current() != nullptr;
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        Tensor yi = Tensor::from_vector(trajectory[i]);
        if (needs_grad) yi.set_requires_grad(true);
        out.push_back(yi);
    }
    if (needs_grad) {
        OdeFunc f_copy = f;
        Tensor y0_copy = y0;
        SolverSpec spec_copy = spec;
        std::vector<double> grid(t_grid.begin(), t_grid.end());
        std::vector<Tensor> outputs = out;
        std::vector<std::shared_ptr<detail::TensorImpl>> produced;
        for (std::size_t i = 1; i < outputs.size(); ++i) produced.push_back(outputs[i].impl());
        Graph::current()->record(std::move(produced), [f_copy, y0_copy, spec_copy, grid, outputs,
                                                       trajectory]() {
            std::vector<std::vector<double>> loss_grads;
            loss_grads.reserve(outputs.size());
            // Index 0 aliases y0 whose direct gradient the tape already
            // handles; inject zeros there to avoid double counting.
            loss_grads.emplace_back(y0_copy.size(), 0.0);
            bool any = false;
            for (std::size_t i = 1; i < outputs.size(); ++i) {
                loss_grads.push_back(outputs[i].grad_or_zeros());
                for (double g : loss_grads.back()) any = any || g != 0.0;
            }
            if (!any) return;
            AdjointResult adj =
                run_adjoint(f_copy, grid, loss_grads, trajectory, spec_copy);
            if (y0_copy.requires_grad()) y0_copy.add_to_grad(adj.y0_grad);
            for (std::size_t j = 0; j < f_copy.params.size(); ++j)
                if (f_copy.params[j].requires_grad())
                    f_copy.params[j].add_to_grad(adj.param_grads[j]);
        });
    }
    return out;
}

AdjointResult grad_adjoint(const OdeFunc& f, const Tensor& y0, std::span<const double> t_grid,
                           std::span<const std::vector<double>> loss_grads,
                           const SolverSpec& spec) {
    check_grid(t_grid);
    if (loss_grads.size() != t_grid.size())
        throw ContractError("grad_adjoint: " + std::to_string(loss_grads.size()) +
                            " loss gradients for " + std::to_string(t_grid.size()) +
                            " grid times");
    for (const auto& g : loss_grads)
        if (g.size() != y0.size())
            throw ContractError("grad_adjoint: loss gradient length " + std::to_string(g.size()) +
                                " vs state length " + std::to_string(y0.size()));
    const std::vector<std::vector<double>> trajectory =
        solve_values(f, y0.values(), t_grid, spec);
    return run_adjoint(f, t_grid, loss_grads, trajectory, spec);
}

double convergence_order(SolverMethod method, const ScalarOdeProblem& problem) {
    const std::vector<double> steps = {0.1, 0.05, 0.025, 0.0125};
    std::vector<double> log_h;
    std::vector<double> log_err;
    OdeFunc f{[&problem](const Tensor& y, double t) {
                  return Tensor::from_vector({problem.f(y[0], t)});
              },
              {}};
    for (double h : steps) {
        SolverSpec spec{method, h, GradientMode::discretize};
        const std::vector<double> grid = {0.0, problem.t_end};
        Tensor y0 = Tensor::from_vector({problem.y0});
        const Tensor y_end = solve(f, y0, grid, spec).back();
        const double err = std::abs(y_end[0] - problem.exact(problem.t_end));
        log_h.push_back(std::log(h));
        log_err.push_back(std::log(std::max(err, 1e-300)));
    }
    // least-squares slope
    const double n = static_cast<double>(steps.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        sx += log_h[i];
        sy += log_err[i];
        sxx += log_h[i] * log_h[i];
        sxy += log_h[i] * log_err[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace tsode
