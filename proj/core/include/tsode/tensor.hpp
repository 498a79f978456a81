#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tsode/errors.hpp"

namespace tsode {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

} // namespace detail

/**
 * Dense 64-bit tensor participating in a reverse-mode differentiation graph.
 *
 * A Tensor is a shared handle: copies alias the same storage. Values are
 * written once by the producing operation; parameter tensors may be updated
 * in place between graphs via mutable_values(). Gradients accumulate into
 * grad() during Graph::backward and are cleared with zero_grad().
 *
 * Supported ranks are 0 (scalar), 1 (vector) and 2 (row-major matrix).
 */
class Tensor {
public:
    Tensor() = default;

    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_vector(std::vector<double> values, bool requires_grad = false);
    static Tensor from_span(std::span<const double> values, bool requires_grad = false);
    static Tensor from_matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                              bool requires_grad = false);
    /// Entries drawn i.i.d. uniform in [lo, hi].
    static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                          bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t size() const { return impl_->values.size(); }
    std::size_t rank() const { return impl_->shape.size(); }
    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    std::span<const double> values() const { return impl_->values; }
    /// In-place access for leaf initialization and optimizer updates.
    /// Must not be called on tensors already recorded on a live graph.
    std::span<double> mutable_values() { return impl_->values; }

    /// Scalar (or single-element) read.
    double value() const;
    double operator[](std::size_t i) const { return impl_->values[i]; }

    std::span<const double> grad() const { return impl_->grad; }
    std::vector<double> grad_or_zeros() const;
    // Gradient mutation goes through the shared impl, so these are callable
    // on const handles (backward closures hold them by value).
    void zero_grad() const { impl_->grad.clear(); }
    void add_to_grad(std::span<const double> delta) const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

/**
 * Tape of executed operations.
 *
 * Operations executed while a Graph is active (see activate()) append their
 * backward steps in execution order; backward() replays them in reverse so
 * every recorded operation sees its output gradient before propagating to
 * operands. A Graph is meant to live for one forward/backward pass and be
 * discarded afterwards. Single-threaded per graph; independent graphs over
 * disjoint tensors may run on different threads.
 */
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    class Scope {
    public:
        explicit Scope(Graph* graph);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Graph* previous_;
    };

    /// Make this graph the recording target for the current thread.
    [[nodiscard]] Scope activate() { return Scope(this); }

    static Graph* current();

    /// Append one executed operation: the impls it produced plus the closure
    /// that routes their output gradients to the operands.
    void record(std::vector<std::shared_ptr<detail::TensorImpl>> outputs,
                std::function<void()> step) {
        steps_.push_back({std::move(outputs), std::move(step)});
    }

    /**
     * Seed d(loss)/d(loss) = 1 and replay the tape in reverse, accumulating
     * gradients into every requires_grad tensor reachable from the loss.
     * Repeated calls without zeroing grads accumulate (each replay propagates
     * a fresh unit seed; grads already present are added to, not reused).
     * Throws ContractError if the loss is not scalar.
     */
    void backward(const Tensor& loss);

    std::size_t op_count() const { return steps_.size(); }

private:
    struct Step {
        std::vector<std::shared_ptr<detail::TensorImpl>> outputs;
        std::function<void()> run;
    };
    std::vector<Step> steps_;
};

/// Temporarily suspends recording on the current thread.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Graph* previous_;
};

// ---- elementwise operations ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
/// exp with the argument clamped to [-60, 60] to keep decay math finite.
Tensor exp(const Tensor& a);
/// max(0, x); subgradient at 0 is 0.
Tensor relu(const Tensor& a);
/// log(1 + exp(x)) in overflow-safe form; d/dx = sigmoid(x).
Tensor softplus(const Tensor& a);

Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
/// c - t elementwise (e.g. one_minus for gates).
Tensor rsub_scalar(double c, const Tensor& a);

// ---- linear algebra ---------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x k] . [k] -> [m]
Tensor matvec(const Tensor& a, const Tensor& x);
/// Sum of all entries -> scalar.
Tensor sum(const Tensor& a);
/// Inner product of two equal-length vectors -> scalar.
Tensor dot(const Tensor& a, const Tensor& b);

// ---- structure ---------------------------------------------------------------

/// Concatenate scalars and rank-1 tensors into one rank-1 tensor.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
/// Contiguous rank-1 window [offset, offset + length).
Tensor slice(const Tensor& a, std::size_t offset, std::size_t length);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

bool all_finite(std::span<const double> values);

} // namespace tsode
