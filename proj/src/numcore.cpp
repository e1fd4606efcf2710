#include "moie/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace moie {

namespace log {

Level& threshold() {
    static Level lvl = Level::Warn;
    return lvl;
}

void emit(Level lvl, const std::string& msg) {
    static const char* names[] = {"debug", "info", "warn"};
    if (lvl < threshold() || lvl == Level::Silent) return;
    std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

}  // namespace log

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace moie

namespace moie::numcore {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "identity";
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "relu") return Activation::Relu;
    if (name == "sigmoid") return Activation::Sigmoid;
    throw InputError("unknown activation: " + name);
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

double cross_entropy(std::span<const double> logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size())) throw ContractError("cross_entropy: label out of range");
    return -log_softmax(logits)[static_cast<std::size_t>(label)];
}

int argmax(std::span<const double> v) {
    if (v.empty()) throw ContractError("argmax: empty input");
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

static double apply_act(Activation a, double x) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Sigmoid: return sigmoid(x);
    }
    return x;
}

// derivative in terms of pre-activation x and post-activation y
static double act_grad(Activation a, double x, double y) {
    switch (a) {
        case Activation::Identity: return 1.0;
        case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::Sigmoid: return y * (1.0 - y);
    }
    return 1.0;
}

int DenseNet::input_dim() const {
    if (layers.empty()) throw StateError("DenseNet: no layers");
    return layers.front().in_dim();
}

int DenseNet::output_dim() const {
    if (layers.empty()) throw StateError("DenseNet: no layers");
    return layers.back().out_dim();
}

std::size_t DenseNet::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
}

void DenseNet::validate() const {
    if (layers.empty()) throw ContractError("DenseNet: empty");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.w.rows <= 0 || l.w.cols <= 0) throw ContractError("DenseNet: empty layer");
        if (static_cast<int>(l.b.size()) != l.out_dim()) throw ContractError("DenseNet: bias size mismatch");
        if (i + 1 < layers.size() && layers[i + 1].in_dim() != l.out_dim())
            throw ContractError("DenseNet: layer dimensions do not chain");
        if (!l.w.all_finite()) throw NumericError("DenseNet: non-finite weight");
        for (double v : l.b)
            if (!std::isfinite(v)) throw NumericError("DenseNet: non-finite bias");
    }
}

std::vector<double> DenseNet::get_params() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    for (const auto& l : layers) {
        flat.insert(flat.end(), l.w.data.begin(), l.w.data.end());
        flat.insert(flat.end(), l.b.begin(), l.b.end());
    }
    return flat;
}

void DenseNet::set_params(std::span<const double> flat) {
    if (flat.size() != param_count()) throw ContractError("DenseNet::set_params: size mismatch");
    std::size_t off = 0;
    for (auto& l : layers) {
        std::copy(flat.begin() + off, flat.begin() + off + l.w.size(), l.w.data.begin());
        off += l.w.size();
        std::copy(flat.begin() + off, flat.begin() + off + l.b.size(), l.b.begin());
        off += l.b.size();
    }
}

DenseNet make_dense(const std::vector<int>& dims, const std::vector<Activation>& acts) {
    if (dims.size() < 2) throw ContractError("make_dense: need at least input and output dims");
    if (acts.size() != dims.size() - 1) throw ContractError("make_dense: one activation per layer required");
    DenseNet net;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer l;
        l.w = Matrix(dims[i + 1], dims[i]);
        l.b.assign(static_cast<std::size_t>(dims[i + 1]), 0.0);
        l.act = acts[i];
        net.layers.push_back(std::move(l));
    }
    return net;
}

DenseNet init_dense(const std::vector<int>& dims, const std::vector<Activation>& acts, std::uint64_t seed) {
    DenseNet net = make_dense(dims, acts);
    Rng rng(seed);
    for (auto& l : net.layers) {
        const double a = std::sqrt(6.0 / (l.in_dim() + l.out_dim()));
        for (double& v : l.w.data) v = rng.uniform(-a, a);
    }
    return net;
}

Matrix forward(const DenseNet& net, const Matrix& batch) {
    net.validate();
    if (batch.cols != net.input_dim()) throw ContractError("forward: batch width != input_dim");
    Matrix cur = batch;
    for (const auto& l : net.layers) {
        Matrix next(cur.rows, l.out_dim());
        for (int r = 0; r < cur.rows; ++r) {
            for (int o = 0; o < l.out_dim(); ++o) {
                double acc = l.b[static_cast<std::size_t>(o)];
                const double* wrow = l.w.data.data() + static_cast<std::size_t>(o) * l.w.cols;
                const double* xrow = cur.data.data() + static_cast<std::size_t>(r) * cur.cols;
                for (int i = 0; i < l.in_dim(); ++i) acc += wrow[i] * xrow[i];
                next(r, o) = apply_act(l.act, acc);
            }
        }
        cur = std::move(next);
    }
    return cur;
}

ForwardCache forward_cached(const DenseNet& net, const Matrix& batch) {
    net.validate();
    if (batch.cols != net.input_dim()) throw ContractError("forward: batch width != input_dim");
    ForwardCache cache;
    cache.input = batch;
    const Matrix* cur = &batch;
    for (const auto& l : net.layers) {
        Matrix pre(cur->rows, l.out_dim());
        Matrix post(cur->rows, l.out_dim());
        for (int r = 0; r < cur->rows; ++r) {
            for (int o = 0; o < l.out_dim(); ++o) {
                double acc = l.b[static_cast<std::size_t>(o)];
                const double* wrow = l.w.data.data() + static_cast<std::size_t>(o) * l.w.cols;
                const double* xrow = cur->data.data() + static_cast<std::size_t>(r) * cur->cols;
                for (int i = 0; i < l.in_dim(); ++i) acc += wrow[i] * xrow[i];
                pre(r, o) = acc;
                post(r, o) = apply_act(l.act, acc);
            }
        }
        cache.pre.push_back(std::move(pre));
        cache.post.push_back(std::move(post));
        cur = &cache.post.back();
    }
    return cache;
}

void backward(const DenseNet& net, const ForwardCache& cache, const Matrix& dloss_dout,
              std::span<double> grad_flat, Matrix* dloss_dinput) {
    if (cache.empty() || cache.pre.size() != net.layers.size())
        throw StateError("backward: no matching forward pass recorded");
    if (cache.input.cols != net.input_dim()) throw StateError("backward: cache does not match network");
    const int m = cache.input.rows;
    if (dloss_dout.rows != m || dloss_dout.cols != net.output_dim())
        throw ContractError("backward: upstream gradient shape mismatch");
    if (grad_flat.size() != net.param_count()) throw ContractError("backward: gradient buffer size mismatch");

    // per-layer flat offsets
    std::vector<std::size_t> offs(net.layers.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        offs[i] = off;
        off += net.layers[i].w.size() + net.layers[i].b.size();
    }

    Matrix delta = dloss_dout;  // dL/d(post-activation of current layer)
    for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
        const Layer& l = net.layers[static_cast<std::size_t>(li)];
        const Matrix& pre = cache.pre[static_cast<std::size_t>(li)];
        const Matrix& post = cache.post[static_cast<std::size_t>(li)];
        const Matrix& input = (li == 0) ? cache.input : cache.post[static_cast<std::size_t>(li) - 1];

        // dL/d(pre-activation)
        Matrix dpre(m, l.out_dim());
        for (int r = 0; r < m; ++r)
            for (int o = 0; o < l.out_dim(); ++o)
                dpre(r, o) = delta(r, o) * act_grad(l.act, pre(r, o), post(r, o));

        double* gw = grad_flat.data() + offs[static_cast<std::size_t>(li)];
        double* gb = gw + l.w.size();
        for (int r = 0; r < m; ++r) {
            const double* xrow = input.data.data() + static_cast<std::size_t>(r) * input.cols;
            for (int o = 0; o < l.out_dim(); ++o) {
                const double d = dpre(r, o);
                if (d == 0.0) continue;
                double* wg = gw + static_cast<std::size_t>(o) * l.w.cols;
                for (int i = 0; i < l.in_dim(); ++i) wg[i] += d * xrow[i];
                gb[o] += d;
            }
        }

        if (li > 0 || dloss_dinput != nullptr) {
            Matrix dinput(m, l.in_dim());
            for (int r = 0; r < m; ++r) {
                for (int o = 0; o < l.out_dim(); ++o) {
                    const double d = dpre(r, o);
                    if (d == 0.0) continue;
                    const double* wrow = l.w.data.data() + static_cast<std::size_t>(o) * l.w.cols;
                    double* drow = dinput.data.data() + static_cast<std::size_t>(r) * dinput.cols;
                    for (int i = 0; i < l.in_dim(); ++i) drow[i] += d * wrow[i];
                }
            }
            if (li == 0) {
                if (dloss_dinput) *dloss_dinput = std::move(dinput);
            } else {
                delta = std::move(dinput);
            }
        }
    }
}

const char* opt_name(OptKind k) {
    switch (k) {
        case OptKind::Sgd: return "sgd";
        case OptKind::SgdMomentum: return "sgd-momentum";
        case OptKind::Adam: return "adam";
    }
    return "sgd";
}

OptKind opt_from_name(const std::string& name) {
    if (name == "sgd") return OptKind::Sgd;
    if (name == "sgd-momentum") return OptKind::SgdMomentum;
    if (name == "adam") return OptKind::Adam;
    throw InputError("unknown optimizer: " + name);
}

OptState::OptState(const OptConfig& c, std::size_t n_params, std::uint64_t seed_) : cfg(c), seed(seed_) {
    if (cfg.kind != OptKind::Sgd) m1.assign(n_params, 0.0);
    if (cfg.kind == OptKind::Adam) m2.assign(n_params, 0.0);
}

void OptState::apply(std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size()) throw ContractError("OptState::apply: size mismatch");
    if (!m1.empty() && m1.size() != params.size()) throw ContractError("OptState::apply: stale moment buffers");
    ++step;
    switch (cfg.kind) {
        case OptKind::Sgd:
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.lr * grad[i];
            break;
        case OptKind::SgdMomentum:
            for (std::size_t i = 0; i < params.size(); ++i) {
                m1[i] = cfg.momentum * m1[i] + grad[i];
                params[i] -= cfg.lr * m1[i];
            }
            break;
        case OptKind::Adam: {
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < params.size(); ++i) {
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
                m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                params[i] -= cfg.lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg.eps);
            }
            break;
        }
    }
    for (double v : params)
        if (!std::isfinite(v)) throw NumericError("optimizer step produced a non-finite parameter");
}

double grad_check(const LossWithGrad& loss_fn, std::vector<double> params, double h, double tol) {
    if (h <= 0.0) throw ContractError("grad_check: h must be positive");
    std::vector<double> analytic;
    const double base = loss_fn(params, &analytic);
    if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");
    if (analytic.size() != params.size()) throw ContractError("grad_check: analytic gradient size mismatch");

    double max_rel = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double orig = params[i];
        params[i] = orig + h;
        const double lp = loss_fn(params, nullptr);
        params[i] = orig - h;
        const double lm = loss_fn(params, nullptr);
        params[i] = orig;
        if (!std::isfinite(lp) || !std::isfinite(lm)) throw NumericError("grad_check: non-finite loss");
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    if (max_rel > tol) log::warn("grad_check: max relative error " + std::to_string(max_rel) + " exceeds tol");
    return max_rel;
}

nlohmann::json dense_to_json(const DenseNet& net) {
    nlohmann::json j;
    j["schema_version"] = 1;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers) {
        nlohmann::json lj;
        lj["in"] = l.in_dim();
        lj["out"] = l.out_dim();
        lj["activation"] = activation_name(l.act);
        lj["w"] = l.w.data;  // row-major
        lj["b"] = l.b;
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    return j;
}

DenseNet dense_from_json(const nlohmann::json& j) {
    if (!j.contains("layers")) throw ParseError("dense checkpoint: missing 'layers'");
    DenseNet net;
    for (const auto& lj : j.at("layers")) {
        Layer l;
        const int in = lj.at("in").get<int>();
        const int out = lj.at("out").get<int>();
        l.w = Matrix(out, in);
        l.w.data = lj.at("w").get<std::vector<double>>();
        if (l.w.data.size() != static_cast<std::size_t>(in) * out) throw ParseError("dense checkpoint: weight size mismatch");
        l.b = lj.at("b").get<std::vector<double>>();
        l.act = activation_from_name(lj.at("activation").get<std::string>());
        net.layers.push_back(std::move(l));
    }
    net.validate();
    return net;
}

void save_dense(const DenseNet& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    out << dense_to_json(net).dump(2) << "\n";
}

DenseNet load_dense(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return dense_from_json(j);
}

}  // namespace moie::numcore
