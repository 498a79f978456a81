#include "tsode/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace tsode {

using json = nlohmann::ordered_json;

std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::gru: return "gru";
    case ModelKind::grud: return "grud";
    case ModelKind::ode_rnn: return "ode_rnn";
    case ModelKind::ode_grud: return "ode_grud";
    case ModelKind::ext_ode_grud: return "ext_ode_grud";
    }
    return "?";
}

std::string to_string(Imputation mode) {
    switch (mode) {
    case Imputation::mean: return "mean";
    case Imputation::forward: return "forward";
    case Imputation::simple: return "simple";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
    if (name == "gru") return ModelKind::gru;
    if (name == "grud") return ModelKind::grud;
    if (name == "ode_rnn") return ModelKind::ode_rnn;
    if (name == "ode_grud") return ModelKind::ode_grud;
    if (name == "ext_ode_grud") return ModelKind::ext_ode_grud;
    throw ConfigError("unknown model kind '" + name +
                      "' (expected gru, grud, ode_rnn, ode_grud or ext_ode_grud)");
}

Imputation imputation_from_string(const std::string& name) {
    if (name == "mean") return Imputation::mean;
    if (name == "forward") return Imputation::forward;
    if (name == "simple") return Imputation::simple;
    throw ConfigError("unknown imputation '" + name + "' (expected mean, forward or simple)");
}

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// x_hat = m*x + (1-m)*(gamma*last + (1-gamma)*mean). The literal variant
/// keeps the historical form m*x + (gamma*x + (1-gamma))*mean.
Tensor trusted_blend(std::span<const double> x, std::span<const double> m, const Tensor& gamma_x,
                     std::span<const double> last, std::span<const double> means, bool literal) {
    const Tensor x_t = Tensor::from_span(x);
    const Tensor m_t = Tensor::from_span(m);
    const Tensor mean_t = Tensor::from_span(means);
    if (literal) {
        Tensor inner = add(mul(gamma_x, x_t), rsub_scalar(1.0, gamma_x));
        return add(mul(m_t, x_t), mul(inner, mean_t));
    }
    const Tensor last_t = Tensor::from_span(last);
    Tensor fallback = add(mul(gamma_x, last_t), mul(rsub_scalar(1.0, gamma_x), mean_t));
    return add(mul(m_t, x_t), mul(rsub_scalar(1.0, m_t), fallback));
}

double median_of(std::vector<double> values, double fallback) {
    if (values.empty()) return fallback;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace

Model::Model(ModelSpec spec, std::size_t input_dim, std::uint64_t seed)
    : spec_(std::move(spec)), input_dim_(input_dim) {
    if (input_dim_ == 0) throw ValidationError("Model: input_dim must be positive");
    if (spec_.hidden_dim == 0) throw ValidationError("Model: hidden_dim must be positive");
    const std::size_t h = spec_.hidden_dim;
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));

    const bool mask_terms = spec_.kind == ModelKind::grud || spec_.kind == ModelKind::ode_grud ||
                            spec_.kind == ModelKind::ext_ode_grud;
    const bool decay = spec_.kind == ModelKind::grud || spec_.kind == ModelKind::ode_grud;
    cell_ = CellParams::init(cell_input_dim(), h, rng, mask_terms, decay);

    if (spec_.kind == ModelKind::ode_rnn) {
        dyn_w1_ = Tensor::uniform({h, h}, -bound, bound, rng, true);
        dyn_b1_ = Tensor::zeros({h}, true);
        dyn_w2_ = Tensor::zeros({h, h}, true); // start from the identity flow
        dyn_b2_ = Tensor::zeros({h}, true);
    }
    if (spec_.kind == ModelKind::ext_ode_grud) {
        // zero filter weights start the decay drift near zero; the small
        // positive bias keeps the integrated pre-activation off the relu
        // kink so the heads receive gradient
        fl_input_.diagonal = true;
        fl_input_.weight = Tensor::zeros({input_dim_}, true);
        fl_input_.bias = Tensor::full({input_dim_}, 0.1, true);
        fl_hidden_.diagonal = false;
        fl_hidden_.weight = Tensor::zeros({h, input_dim_}, true);
        fl_hidden_.bias = Tensor::full({h}, 0.1, true);
    }
    head_w_ = Tensor::uniform({h}, -bound, bound, rng, true);
    head_b_ = Tensor::scalar(0.0, true);
    feature_means_.assign(input_dim_, 0.0);

    cell_.collect(params_, "cell.");
    if (spec_.kind == ModelKind::ode_rnn) {
        params_.push_back({"dyn.w1", dyn_w1_});
        params_.push_back({"dyn.b1", dyn_b1_});
        params_.push_back({"dyn.w2", dyn_w2_});
        params_.push_back({"dyn.b2", dyn_b2_});
    }
    if (spec_.kind == ModelKind::ext_ode_grud) {
        params_.push_back({"fl_input.weight", fl_input_.weight});
        params_.push_back({"fl_input.bias", fl_input_.bias});
        params_.push_back({"fl_hidden.weight", fl_hidden_.weight});
        params_.push_back({"fl_hidden.bias", fl_hidden_.bias});
    }
    params_.push_back({"head.weight", head_w_});
    params_.push_back({"head.bias", head_b_});
}

void Model::set_feature_means(std::vector<double> means) {
    if (means.size() != input_dim_)
        throw ShapeError("set_feature_means: " + std::to_string(means.size()) + " means for " +
                         std::to_string(input_dim_) + " variables");
    feature_means_ = std::move(means);
}

std::size_t Model::cell_input_dim() const {
    const bool simple = spec_.imputation == Imputation::simple &&
                        (spec_.kind == ModelKind::gru || spec_.kind == ModelKind::ode_rnn);
    return simple ? 3 * input_dim_ : input_dim_;
}

Tensor Model::readout(const Tensor& h) const { return add(dot(head_w_, h), head_b_); }

OdeFunc Model::cell_dynamics() const {
    OdeFunc f;
    CellParams cell = cell_; // shared handles
    f.fn = [cell](const Tensor& y, double t) { return grud_derivative(y, t, cell); };
    f.params = {cell_.reset_x,  cell_.reset_h,  cell_.reset_m,  cell_.reset_b,
                cell_.update_x, cell_.update_h, cell_.update_m, cell_.update_b,
                cell_.cand_x,   cell_.cand_h,   cell_.cand_m,   cell_.cand_b};
    return f;
}

OdeFunc Model::hidden_dynamics() const {
    OdeFunc f;
    Tensor w1 = dyn_w1_, b1 = dyn_b1_, w2 = dyn_w2_, b2 = dyn_b2_;
    f.fn = [w1, b1, w2, b2](const Tensor& y, double) {
        return add(matvec(w2, tanh(add(matvec(w1, y), b1))), b2);
    };
    f.params = {dyn_w1_, dyn_b1_, dyn_w2_, dyn_b2_};
    return f;
}

std::vector<double> Model::build_inputs(const Series& s) const {
    if (spec_.imputation == Imputation::simple) return build_simple_inputs(s, feature_means_);
    const std::size_t d = input_dim_;
    std::vector<double> out;
    out.reserve(s.n_steps() * d);
    std::vector<double> last(feature_means_);
    for (std::size_t t = 0; t < s.n_steps(); ++t)
        for (std::size_t v = 0; v < d; ++v) {
            const double m = s.mask[t * d + v];
            const double x = s.values[t * d + v];
            if (m == 1.0) {
                out.push_back(x);
                last[v] = x;
            } else {
                out.push_back(spec_.imputation == Imputation::mean ? feature_means_[v] : last[v]);
            }
        }
    return out;
}

double Model::final_window_for(const Series& s) const {
    if (spec_.final_window > 0.0) return spec_.final_window;
    std::vector<double> gaps;
    for (std::size_t t = 1; t < s.n_steps(); ++t) {
        const double gap = s.times[t] - s.times[t - 1];
        if (gap > 0.0) gaps.push_back(gap);
    }
    return median_of(std::move(gaps), 0.0);
}

Tensor Model::forward_series(const Series& s) const {
    if (s.n_steps() == 0)
        throw ValidationError("forward: empty series" +
                              (s.id.empty() ? std::string() : " " + s.id));
    if (s.n_vars != input_dim_)
        throw ShapeError("forward: series has " + std::to_string(s.n_vars) +
                         " variables, model expects " + std::to_string(input_dim_));
    switch (spec_.kind) {
    case ModelKind::gru: return forward_gru(s);
    case ModelKind::grud: return forward_grud(s);
    case ModelKind::ode_rnn: return forward_ode_rnn(s);
    case ModelKind::ode_grud: return forward_ode_grud(s);
    case ModelKind::ext_ode_grud: return forward_ext_ode_grud(s);
    }
    throw ContractError("forward: unhandled model kind");
}

std::vector<Tensor> Model::forward(const TimeSeriesBatch& batch) const {
    std::vector<Tensor> logits;
    logits.reserve(batch.size());
    for (const Series& s : batch.series) logits.push_back(forward_series(s));
    return logits;
}

std::vector<double> Model::predict(const TimeSeriesBatch& batch) const {
    NoGradScope no_recording;
    std::vector<double> scores;
    scores.reserve(batch.size());
    for (const Series& s : batch.series) scores.push_back(stable_sigmoid(forward_series(s).value()));
    return scores;
}

Tensor Model::forward_gru(const Series& s) const {
    const std::vector<double> inputs = build_inputs(s);
    const std::size_t in_dim = cell_input_dim();
    Tensor h = Tensor::zeros({spec_.hidden_dim});
    for (std::size_t t = 0; t < s.n_steps(); ++t) {
        const Tensor x = Tensor::from_span({inputs.data() + t * in_dim, in_dim});
        h = gru_step(x, h, cell_);
    }
    return readout(h);
}

Tensor Model::forward_grud(const Series& s) const {
    GrudState state{Tensor::zeros({spec_.hidden_dim}), feature_means_};
    for (std::size_t t = 0; t < s.n_steps(); ++t)
        grud_step(s.value_row(t), s.mask_row(t), s.interval_row(t), state, cell_, feature_means_,
                  monitor_);
    return readout(state.h);
}

Tensor Model::forward_ode_rnn(const Series& s) const {
    const std::vector<double> inputs = build_inputs(s);
    const std::size_t in_dim = cell_input_dim();
    const OdeFunc dynamics = hidden_dynamics();
    Tensor h = Tensor::zeros({spec_.hidden_dim});
    for (std::size_t t = 0; t < s.n_steps(); ++t) {
        if (t > 0 && s.times[t] > s.times[t - 1]) {
            // autonomous dynamics; local time keeps results shift-invariant
            const std::array<double, 2> grid{0.0, s.times[t] - s.times[t - 1]};
            h = solve(dynamics, h, grid, spec_.solver).back();
        }
        const Tensor x = Tensor::from_span({inputs.data() + t * in_dim, in_dim});
        h = gru_step(x, h, cell_);
    }
    return readout(h);
}

Tensor Model::forward_ode_grud(const Series& s) const {
    const std::size_t d = input_dim_;
    const std::size_t hd = spec_.hidden_dim;
    const OdeFunc dynamics = cell_dynamics();
    const double window = final_window_for(s);
    Tensor h = Tensor::zeros({hd});
    std::vector<double> last(feature_means_);
    for (std::size_t t = 0; t < s.n_steps(); ++t) {
        const Tensor delta = Tensor::from_span(s.interval_row(t));
        const Tensor gamma_x = decay_rate(delta, cell_.input_decay);
        const Tensor gamma_h = decay_rate(delta, cell_.hidden_decay);
        if (monitor_ != nullptr) {
            monitor_->observe(gamma_x.values());
            monitor_->observe(gamma_h.values());
        }
        const Tensor h_hat = mul(gamma_h, h);
        const Tensor x_hat =
            trusted_blend(s.value_row(t), s.mask_row(t), gamma_x, last, feature_means_, false);
        Tensor y = concat({x_hat, Tensor::from_span(s.mask_row(t)), h_hat});
        for (std::size_t v = 0; v < d; ++v)
            if (s.mask[t * d + v] == 1.0) last[v] = s.values[t * d + v];
        const double gap = t + 1 < s.n_steps() ? s.times[t + 1] - s.times[t] : window;
        if (gap > 0.0) {
            const std::array<double, 2> grid{0.0, gap};
            y = solve(dynamics, y, grid, spec_.solver).back();
        }
        h = slice(y, 2 * d, hd);
    }
    return readout(h);
}

Tensor Model::forward_ext_ode_grud(const Series& s) const {
    const std::size_t d = input_dim_;
    const std::size_t hd = spec_.hidden_dim;
    const OdeFunc dynamics = cell_dynamics();
    const double window = final_window_for(s);
    Tensor h = Tensor::zeros({hd});
    Tensor g_input = Tensor::zeros({d});   // decay pre-activation states
    Tensor g_hidden = Tensor::zeros({hd});
    std::vector<double> last(feature_means_);
    std::vector<double> last_time(d, s.times[0]);

    for (std::size_t t = 0; t < s.n_steps(); ++t) {
        const Tensor gamma_x = exp(neg(relu(g_input)));
        const Tensor gamma_h = exp(neg(relu(g_hidden)));
        if (monitor_ != nullptr) {
            monitor_->observe(gamma_x.values());
            monitor_->observe(gamma_h.values());
        }
        const Tensor h_hat = mul(gamma_h, h);
        const Tensor x_hat = trusted_blend(s.value_row(t), s.mask_row(t), gamma_x, last,
                                           feature_means_, spec_.literal_input_blend);
        Tensor y = concat({x_hat, Tensor::from_span(s.mask_row(t)), h_hat});

        for (std::size_t v = 0; v < d; ++v)
            if (s.mask[t * d + v] == 1.0) {
                last[v] = s.values[t * d + v];
                last_time[v] = s.times[t];
            }
        // observed variables reset their decay state; the hidden head resets
        // at every observation
        g_input = mul(g_input, rsub_scalar(1.0, Tensor::from_span(s.mask_row(t))));
        g_hidden = Tensor::zeros({hd});

        const double gap = t + 1 < s.n_steps() ? s.times[t + 1] - s.times[t] : window;
        if (gap > 0.0) {
            const std::array<double, 2> grid{0.0, gap};
            y = solve(dynamics, y, grid, spec_.solver).back();

            // staleness at local interval time u is (u + elapsed at start)
            std::vector<double> elapsed(d);
            for (std::size_t v = 0; v < d; ++v) elapsed[v] = s.times[t] - last_time[v];

            OdeFunc fl_x;
            {
                Tensor w = fl_input_.weight, b = fl_input_.bias;
                fl_x.fn = [w, b, elapsed](const Tensor&, double u) {
                    std::vector<double> staleness(elapsed.size());
                    for (std::size_t v = 0; v < elapsed.size(); ++v)
                        staleness[v] = u + elapsed[v];
                    return add(mul(w, Tensor::from_vector(std::move(staleness))), b);
                };
                fl_x.params = {w, b};
            }
            g_input = solve(fl_x, g_input, grid, spec_.solver).back();

            OdeFunc fl_h;
            {
                Tensor w = fl_hidden_.weight, b = fl_hidden_.bias;
                fl_h.fn = [w, b, elapsed](const Tensor&, double u) {
                    std::vector<double> staleness(elapsed.size());
                    for (std::size_t v = 0; v < elapsed.size(); ++v)
                        staleness[v] = u + elapsed[v];
                    return add(matvec(w, Tensor::from_vector(std::move(staleness))), b);
                };
                fl_h.params = {w, b};
            }
            g_hidden = solve(fl_h, g_hidden, grid, spec_.solver).back();
        }
        h = slice(y, 2 * d, hd);
    }
    return readout(h);
}

double median_interobservation_gap(const TimeSeriesBatch& batch) {
    std::vector<double> gaps;
    for (const Series& s : batch.series)
        for (std::size_t t = 1; t < s.n_steps(); ++t) {
            const double gap = s.times[t] - s.times[t - 1];
            if (gap > 0.0) gaps.push_back(gap);
        }
    return median_of(std::move(gaps), 1.0);
}

double default_step_size(const TimeSeriesBatch& batch) {
    return median_interobservation_gap(batch) / 4.0;
}

// ---- checkpoint ----------------------------------------------------------------

namespace {

json spec_to_json(const ModelSpec& spec) {
    json j;
    j["kind"] = to_string(spec.kind);
    j["hidden_dim"] = spec.hidden_dim;
    j["imputation"] = to_string(spec.imputation);
    j["solver"] = {{"method", to_string(spec.solver.method)},
                   {"step_size", spec.solver.step_size},
                   {"gradient_mode", to_string(spec.solver.gradient_mode)}};
    j["literal_input_blend"] = spec.literal_input_blend;
    j["final_window"] = spec.final_window;
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec spec;
    spec.kind = model_kind_from_string(j.at("kind").get<std::string>());
    spec.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    spec.imputation = imputation_from_string(j.at("imputation").get<std::string>());
    const json& s = j.at("solver");
    spec.solver.method = solver_method_from_string(s.at("method").get<std::string>());
    spec.solver.step_size = s.at("step_size").get<double>();
    spec.solver.gradient_mode = gradient_mode_from_string(s.at("gradient_mode").get<std::string>());
    spec.literal_input_blend = j.at("literal_input_blend").get<bool>();
    spec.final_window = j.at("final_window").get<double>();
    return spec;
}

constexpr int kCheckpointVersion = 1;

} // namespace

void save_checkpoint(const std::string& path, const Model& model, const Normalizer& normalizer) {
    json j;
    j["format"] = "tsode-checkpoint";
    j["version"] = kCheckpointVersion;
    j["model"] = spec_to_json(model.spec());
    j["input_dim"] = model.input_dim();
    j["feature_means"] = model.feature_means();
    j["normalizer"] = {{"means", normalizer.means}, {"stds", normalizer.stds}};
    json params = json::array();
    for (const NamedTensor& p : model.parameters()) {
        json entry;
        entry["name"] = p.name;
        entry["shape"] = p.tensor.shape();
        entry["values"] = std::vector<double>(p.tensor.values().begin(), p.tensor.values().end());
        params.push_back(std::move(entry));
    }
    j["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write checkpoint to " + path);
    out << j.dump(1) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open checkpoint " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("malformed checkpoint " + path + ": " + e.what());
    }
    if (j.value("format", "") != "tsode-checkpoint")
        throw ValidationError(path + " is not a tsode checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw ValidationError("unsupported checkpoint version in " + path);
    Checkpoint ckpt;
    ckpt.spec = spec_from_json(j.at("model"));
    ckpt.input_dim = j.at("input_dim").get<std::size_t>();
    ckpt.feature_means = j.at("feature_means").get<std::vector<double>>();
    ckpt.normalizer.means = j.at("normalizer").at("means").get<std::vector<double>>();
    ckpt.normalizer.stds = j.at("normalizer").at("stds").get<std::vector<double>>();
    for (const json& entry : j.at("params")) {
        NamedTensor p;
        p.name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> values = entry.at("values").get<std::vector<double>>();
        if (values.size() != shape_numel(shape))
            throw ValidationError("checkpoint param " + p.name + " has " +
                                  std::to_string(values.size()) + " values for shape " +
                                  shape_to_string(shape));
        p.tensor = Tensor::from_vector(std::move(values));
        p.tensor.impl()->shape = shape;
        ckpt.params.push_back(std::move(p));
    }
    return ckpt;
}

Model Checkpoint::restore() const {
    Model model(spec, input_dim, /*seed=*/0);
    std::vector<NamedTensor>& live = model.parameters();
    if (live.size() != params.size())
        throw ValidationError("checkpoint has " + std::to_string(params.size()) +
                              " parameters, model expects " + std::to_string(live.size()));
    for (const NamedTensor& stored : params) {
        auto it = std::find_if(live.begin(), live.end(),
                               [&](const NamedTensor& p) { return p.name == stored.name; });
        if (it == live.end())
            throw ValidationError("checkpoint parameter " + stored.name + " not in model");
        if (it->tensor.shape() != stored.tensor.shape())
            throw ValidationError("checkpoint parameter " + stored.name + " has shape " +
                                  shape_to_string(stored.tensor.shape()) + ", model expects " +
                                  shape_to_string(it->tensor.shape()));
        std::copy(stored.tensor.values().begin(), stored.tensor.values().end(),
                  it->tensor.mutable_values().begin());
    }
    model.set_feature_means(feature_means);
    return model;
}

} // namespace tsode
