#include "tsode/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

namespace tsode {

namespace {

thread_local Graph* t_current_graph = nullptr;

constexpr double kExpClip = 60.0;

using Impl = std::shared_ptr<detail::TensorImpl>;

Impl make_impl(Shape shape, std::vector<double> values) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    return impl;
}

bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (t_current_graph == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

std::string shape_to_string(const Shape& shape) {
    if (shape.empty()) return "[scalar]";
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) out += "x";
        out += std::to_string(shape[i]);
    }
    out += "]";
    return out;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) n *= extent;
    return n;
}

bool all_finite(std::span<const double> values) {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::scalar(double value, bool requires_grad) {
    Tensor t(make_impl({}, {value}));
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    Tensor t(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    Tensor t(make_impl(std::move(shape), std::vector<double>(n, value)));
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from_vector(std::vector<double> values, bool requires_grad) {
    Shape shape{values.size()};
    Tensor t(make_impl(std::move(shape), std::move(values)));
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from_span(std::span<const double> values, bool requires_grad) {
    return from_vector(std::vector<double>(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::from_matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                           bool requires_grad) {
    if (values.size() != rows * cols)
        throw ShapeError("from_matrix: " + std::to_string(values.size()) +
                         " values for shape [" + std::to_string(rows) + "x" +
                         std::to_string(cols) + "]");
    Tensor t(make_impl({rows, cols}, std::move(values)));
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(n);
    for (double& v : values) v = dist(rng);
    Tensor t(make_impl(std::move(shape), std::move(values)));
    t.impl_->requires_grad = requires_grad;
    return t;
}

double Tensor::value() const {
    if (size() != 1)
        throw ContractError("value(): tensor has " + std::to_string(size()) +
                            " elements, expected 1");
    return impl_->values[0];
}

std::vector<double> Tensor::grad_or_zeros() const {
    if (impl_->grad.empty()) return std::vector<double>(size(), 0.0);
    return impl_->grad;
}

void Tensor::add_to_grad(std::span<const double> delta) const {
    if (delta.size() != size())
        throw ShapeError("add_to_grad: length " + std::to_string(delta.size()) + " vs tensor " +
                         std::to_string(size()));
    impl_->ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) impl_->grad[i] += delta[i];
}

// ---- Graph --------------------------------------------------------------------

Graph::Scope::Scope(Graph* graph) : previous_(t_current_graph) { t_current_graph = graph; }
Graph::Scope::~Scope() { t_current_graph = previous_; }

Graph* Graph::current() { return t_current_graph; }

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got " +
                            (loss.defined() ? shape_to_string(loss.shape()) : "undefined"));
    // Park previously accumulated output gradients so the replay only
    // propagates this call's seed; they are added back afterwards.
    std::vector<std::vector<double>> parked;
    parked.reserve(steps_.size());
    for (Step& step : steps_)
        for (auto& impl : step.outputs) {
            parked.push_back(std::move(impl->grad));
            impl->grad.clear();
        }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    // Recording is suspended during replay so backward steps may run their
    // own scratch graphs (adjoint integration does).
    {
        NoGradScope no_recording;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->run();
    }
    std::size_t cursor = 0;
    for (Step& step : steps_)
        for (auto& impl : step.outputs) {
            std::vector<double>& old = parked[cursor++];
            if (!old.empty()) {
                impl->ensure_grad();
                for (std::size_t i = 0; i < old.size(); ++i) impl->grad[i] += old[i];
            }
        }
}

NoGradScope::NoGradScope() : previous_(t_current_graph) { t_current_graph = nullptr; }
NoGradScope::~NoGradScope() { t_current_graph = previous_; }

// ---- elementwise ops ------------------------------------------------------------

namespace {

// Shared skeleton for same-shape binary ops. The backward lambda receives
// (out_grad, a_impl, b_impl) and accumulates into whichever operand tracks
// gradients.
template <typename Forward, typename Backward>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, Forward forward,
                          Backward backward) {
    check_same_shape(name, a, b);
    const std::size_t n = a.size();
    std::vector<double> out_values(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out_values[i] = forward(av[i], bv[i]);
    Tensor out = Tensor::from_vector(std::move(out_values));
    out.impl()->shape = a.shape();
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
        t_current_graph->record({oi}, [ai, bi, oi, backward]() {
            if (oi->grad.empty()) return;
            backward(oi->grad, *ai, *bi);
        });
    }
    return out;
}

template <typename Forward, typename Backward>
Tensor unary_elementwise(const Tensor& a, Forward forward, Backward backward) {
    const std::size_t n = a.size();
    std::vector<double> out_values(n);
    auto av = a.values();
    for (std::size_t i = 0; i < n; ++i) out_values[i] = forward(av[i]);
    Tensor out = Tensor::from_vector(std::move(out_values));
    out.impl()->shape = a.shape();
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Impl ai = a.impl(), oi = out.impl();
        t_current_graph->record({oi}, [ai, oi, backward]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ai->ensure_grad();
            backward(oi->grad, *ai, *oi);
        });
    }
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](const std::vector<double>& og, detail::TensorImpl& ai, detail::TensorImpl& bi) {
            if (ai.requires_grad) {
                ai.ensure_grad();
                for (std::size_t i = 0; i < og.size(); ++i) ai.grad[i] += og[i];
            }
            if (bi.requires_grad) {
                bi.ensure_grad();
                for (std::size_t i = 0; i < og.size(); ++i) bi.grad[i] += og[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](const std::vector<double>& og, detail::TensorImpl& ai, detail::TensorImpl& bi) {
            if (ai.requires_grad) {
                ai.ensure_grad();
                for (std::size_t i = 0; i < og.size(); ++i) ai.grad[i] += og[i];
            }
            if (bi.requires_grad) {
                bi.ensure_grad();
                for (std::size_t i = 0; i < og.size(); ++i) bi.grad[i] -= og[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](const std::vector<double>& og, detail::TensorImpl& ai, detail::TensorImpl& bi) {
            if (ai.requires_grad) {
                ai.ensure_grad();
                for (std::size_t i = 0; i < og.size(); ++i) ai.grad[i] += og[i] * bi.values[i];
            }
            if (bi.requires_grad) {
                bi.ensure_grad();
                for (std::size_t i = 0; i < og.size(); ++i) bi.grad[i] += og[i] * ai.values[i];
            }
        });
}

Tensor neg(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return -x; },
        [](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl&) {
            for (std::size_t i = 0; i < og.size(); ++i) ai.grad[i] -= og[i];
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return stable_sigmoid(x); },
        [](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl& oi) {
            for (std::size_t i = 0; i < og.size(); ++i) {
                const double y = oi.values[i];
                ai.grad[i] += og[i] * y * (1.0 - y);
            }
        });
}

Tensor tanh(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return std::tanh(x); },
        [](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl& oi) {
            for (std::size_t i = 0; i < og.size(); ++i) {
                const double y = oi.values[i];
                ai.grad[i] += og[i] * (1.0 - y * y);
            }
        });
}

Tensor exp(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return std::exp(std::clamp(x, -kExpClip, kExpClip)); },
        [](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl& oi) {
            for (std::size_t i = 0; i < og.size(); ++i) ai.grad[i] += og[i] * oi.values[i];
        });
}

Tensor relu(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl&) {
            for (std::size_t i = 0; i < og.size(); ++i)
                if (ai.values[i] > 0.0) ai.grad[i] += og[i];
        });
}

Tensor softplus(const Tensor& a) {
    return unary_elementwise(
        a,
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
        [](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl&) {
            for (std::size_t i = 0; i < og.size(); ++i)
                ai.grad[i] += og[i] * stable_sigmoid(ai.values[i]);
        });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_elementwise(
        a, [c](double x) { return x + c; },
        [](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl&) {
            for (std::size_t i = 0; i < og.size(); ++i) ai.grad[i] += og[i];
        });
}

Tensor scale(const Tensor& a, double c) {
    return unary_elementwise(
        a, [c](double x) { return c * x; },
        [c](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl&) {
            for (std::size_t i = 0; i < og.size(); ++i) ai.grad[i] += c * og[i];
        });
}

Tensor rsub_scalar(double c, const Tensor& a) {
    return unary_elementwise(
        a, [c](double x) { return c - x; },
        [](const std::vector<double>& og, detail::TensorImpl& ai, const detail::TensorImpl&) {
            for (std::size_t i = 0; i < og.size(); ++i) ai.grad[i] -= og[i];
        });
}

// ---- linear algebra --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out_values(m * n, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out_values[i * n + j] += aip * bv[p * n + j];
        }
    Tensor out = Tensor::from_vector(std::move(out_values));
    out.impl()->shape = {m, n};
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
        t_current_graph->record({oi}, [ai, bi, oi, m, k, n]() {
            if (oi->grad.empty()) return;
            const auto& og = oi->grad;
            if (ai->requires_grad) {
                ai->ensure_grad();
                // dA = dOut . B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += og[i * n + j] * bi->values[p * n + j];
                        ai->grad[i * k + p] += acc;
                    }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                // dB = A^T . dOut
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += ai->values[i * k + p] * og[i * n + j];
                        bi->grad[p * n + j] += acc;
                    }
            }
        });
    }
    return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    if (a.rank() != 2 || x.rank() != 1 || a.shape()[1] != x.shape()[0])
        throw ShapeError("matvec: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(x.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    std::vector<double> out_values(m, 0.0);
    auto av = a.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * xv[p];
        out_values[i] = acc;
    }
    Tensor out = Tensor::from_vector(std::move(out_values));
    if (tracing({&a, &x})) {
        out.set_requires_grad(true);
        Impl ai = a.impl(), xi = x.impl(), oi = out.impl();
        t_current_graph->record({oi}, [ai, xi, oi, m, k]() {
            if (oi->grad.empty()) return;
            const auto& og = oi->grad;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) ai->grad[i * k + p] += og[i] * xi->values[p];
            }
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) xi->grad[p] += ai->values[i * k + p] * og[i];
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Impl ai = a.impl(), oi = out.impl();
        t_current_graph->record({oi}, [ai, oi]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ai->ensure_grad();
            const double g = oi->grad[0];
            for (double& slot : ai->grad) slot += g;
        });
    }
    return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
        throw ShapeError("dot: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
    double acc = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    Tensor out = Tensor::scalar(acc);
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
        t_current_graph->record({oi}, [ai, bi, oi]() {
            if (oi->grad.empty()) return;
            const double g = oi->grad[0];
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < ai->values.size(); ++i)
                    ai->grad[i] += g * bi->values[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < bi->values.size(); ++i)
                    bi->grad[i] += g * ai->values[i];
            }
        });
    }
    return out;
}

// ---- structure ----------------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts) {
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() > 1)
            throw ShapeError("concat: scalar or rank-1 tensors required, got " +
                             shape_to_string(p.shape()));
        total += p.size();
    }
    std::vector<double> out_values;
    out_values.reserve(total);
    for (const Tensor& p : parts) {
        auto pv = p.values();
        out_values.insert(out_values.end(), pv.begin(), pv.end());
    }
    Tensor out = Tensor::from_vector(std::move(out_values));

    bool needs_grad = false;
    if (t_current_graph != nullptr)
        for (const Tensor& p : parts)
            if (p.requires_grad()) needs_grad = true;
    if (needs_grad) {
        out.set_requires_grad(true);
        std::vector<Impl> part_impls;
        part_impls.reserve(parts.size());
        for (const Tensor& p : parts) part_impls.push_back(p.impl());
        Impl oi = out.impl();
        t_current_graph->record({oi}, [part_impls, oi]() {
            if (oi->grad.empty()) return;
            std::size_t offset = 0;
            for (const Impl& pi : part_impls) {
                if (pi->requires_grad) {
                    pi->ensure_grad();
                    for (std::size_t i = 0; i < pi->values.size(); ++i)
                        pi->grad[i] += oi->grad[offset + i];
                }
                offset += pi->values.size();
            }
        });
    }
    return out;
}

Tensor concat(std::initializer_list<Tensor> parts) {
    std::vector<Tensor> copy(parts);
    return concat(std::span<const Tensor>(copy));
}

Tensor slice(const Tensor& a, std::size_t offset, std::size_t length) {
    if (a.rank() != 1 || offset + length > a.size())
        throw ShapeError("slice: window [" + std::to_string(offset) + ", " +
                         std::to_string(offset + length) + ") out of range for " +
                         shape_to_string(a.shape()));
    auto av = a.values();
    std::vector<double> out_values(av.begin() + static_cast<std::ptrdiff_t>(offset),
                                   av.begin() + static_cast<std::ptrdiff_t>(offset + length));
    Tensor out = Tensor::from_vector(std::move(out_values));
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Impl ai = a.impl(), oi = out.impl();
        t_current_graph->record({oi}, [ai, oi, offset, length]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ai->ensure_grad();
            for (std::size_t i = 0; i < length; ++i) ai->grad[offset + i] += oi->grad[i];
        });
    }
    return out;
}

} // namespace tsode
