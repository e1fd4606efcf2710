#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "moie/matrix.hpp"

#include "json.hpp"

namespace moie::numcore {

enum class Activation { Identity, Relu, Sigmoid };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

double sigmoid(double x);

// Stable softmax / log-softmax over a logit span.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
// -log softmax(logits)[label]
double cross_entropy(std::span<const double> logits, int label);
// Ties break toward the lowest index.
int argmax(std::span<const double> v);

struct Layer {
    Matrix w;  // [out x in]
    std::vector<double> b;
    Activation act = Activation::Identity;

    int in_dim() const { return w.cols; }
    int out_dim() const { return w.rows; }
};

// A plain MLP. Parameters are addressed through a single flat vector in
// layer order (w row-major, then b), which is what the optimizers and the
// gradient checker operate on.
struct DenseNet {
    std::vector<Layer> layers;

    int input_dim() const;
    int output_dim() const;
    std::size_t param_count() const;
    void validate() const;  // dimension chaining + finiteness

    std::vector<double> get_params() const;
    void set_params(std::span<const double> flat);
};

// Uninitialized (zero) network with the given layer widths.
DenseNet make_dense(const std::vector<int>& dims, const std::vector<Activation>& acts);
// Glorot-uniform init: U(-sqrt(6/(fan_in+fan_out)), +...), biases zero.
DenseNet init_dense(const std::vector<int>& dims, const std::vector<Activation>& acts, std::uint64_t seed);

struct ForwardCache {
    Matrix input;
    std::vector<Matrix> pre;   // pre-activation per layer
    std::vector<Matrix> post;  // post-activation per layer

    bool empty() const { return pre.empty() && post.empty(); }
};

// Pure batched forward pass; batch is [m x input_dim].
Matrix forward(const DenseNet& net, const Matrix& batch);
ForwardCache forward_cached(const DenseNet& net, const Matrix& batch);

// Backprop for the recorded forward pass. Accumulates parameter gradients
// into grad_flat (size param_count, offset layout matching get_params) and
// optionally writes dL/dinput. Throws StateError when the cache does not
// match the network.
void backward(const DenseNet& net, const ForwardCache& cache, const Matrix& dloss_dout,
              std::span<double> grad_flat, Matrix* dloss_dinput = nullptr);

enum class OptKind { Sgd, SgdMomentum, Adam };

const char* opt_name(OptKind k);
OptKind opt_from_name(const std::string& name);

struct OptConfig {
    OptKind kind = OptKind::Adam;
    double lr = 0.01;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptState {
    OptConfig cfg;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::vector<double> m1;  // momentum / first moment
    std::vector<double> m2;  // second moment (adam)

    OptState(const OptConfig& c, std::size_t n_params, std::uint64_t seed_);

    // One update step in place; checks all parameters stay finite.
    void apply(std::span<double> params, std::span<const double> grad);
};

// Loss callback for the checker: returns loss at params; when grad != nullptr
// also fills the analytic gradient.
using LossWithGrad = std::function<double(std::span<const double> params, std::vector<double>* grad)>;

// Central finite differences vs. analytic gradient. Returns
// max_i |g_a - g_n| / max(|g_a|, |g_n|, 1e-8). tol only controls a warning.
double grad_check(const LossWithGrad& loss_fn, std::vector<double> params, double h, double tol);

nlohmann::json dense_to_json(const DenseNet& net);
DenseNet dense_from_json(const nlohmann::json& j);

void save_dense(const DenseNet& net, const std::string& path);
DenseNet load_dense(const std::string& path);

}  // namespace moie::numcore
