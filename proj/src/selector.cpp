#include "moie/selector.hpp"

#include <algorithm>
#include <cmath>

namespace moie::selector {

void Selector::validate() const {
    if (tau <= 0.0 || tau > 1.0) throw ContractError("Selector: tau must be in (0,1]");
    gate.validate();
    if (gate.output_dim() != 1) throw ContractError("Selector: gate must have a single output");
    if (gate.layers.back().act != numcore::Activation::Sigmoid)
        throw ContractError("Selector: gate output must be sigmoid");
}

double Selector::pi(std::span<const double> concepts) const {
    Matrix batch(1, static_cast<int>(concepts.size()));
    std::copy(concepts.begin(), concepts.end(), batch.row(0).begin());
    return numcore::forward(gate, batch)(0, 0);
}

std::vector<double> Selector::pi_batch(const Matrix& concepts) const {
    const Matrix out = numcore::forward(gate, concepts);
    std::vector<double> pis(static_cast<std::size_t>(out.rows));
    for (int j = 0; j < out.rows; ++j) pis[static_cast<std::size_t>(j)] = out(j, 0);
    return pis;
}

Selector init_selector(int n_used, const std::vector<int>& hidden, double tau, double lambda_s, std::uint64_t seed) {
    Selector s;
    s.tau = tau;
    s.lambda_s = lambda_s;
    std::vector<int> dims{n_used};
    std::vector<numcore::Activation> acts;
    for (int h : hidden) {
        dims.push_back(h);
        acts.push_back(numcore::Activation::Relu);
    }
    dims.push_back(1);
    acts.push_back(numcore::Activation::Sigmoid);
    s.gate = numcore::init_dense(dims, acts, derive_seed(seed, 21));
    s.validate();
    return s;
}

void SelectiveLossCfg::validate() const {
    if (alpha_mix < 0.0 || alpha_mix > 1.0) throw ContractError("SelectiveLossCfg: alpha_mix must be in [0,1]");
    if (lambda_s < 0.0) throw ContractError("SelectiveLossCfg: lambda_s must be nonnegative");
}

double coverage(std::span<const double> pi_values) {
    if (pi_values.empty()) throw InputError("coverage: empty input");
    double sum = 0.0;
    for (double v : pi_values) {
        if (v < 0.0 || v > 1.0) throw ContractError("coverage: value outside [0,1]");
        sum += v;
    }
    return sum / static_cast<double>(pi_values.size());
}

double coverage_penalty(double tau, double zeta, double lambda_s) {
    if (!std::isfinite(tau) || !std::isfinite(zeta)) throw NumericError("coverage_penalty: non-finite input");
    const double a = std::max(0.0, tau - zeta);
    return lambda_s * a * a;
}

double routing_weight(std::span<const double> pi_history, double pi_k) {
    double w = pi_k;
    for (double p : pi_history) {
        if (p < 0.0 || p > 1.0) throw ContractError("routing_weight: history value outside [0,1]");
        w *= (1.0 - p);
    }
    return w;
}

double residual_weight(std::span<const double> pi_through_k) {
    double w = 1.0;
    for (double p : pi_through_k) {
        if (p < 0.0 || p > 1.0) throw ContractError("residual_weight: value outside [0,1]");
        w *= (1.0 - p);
    }
    return w;
}

double selective_risk(std::span<const double> weighted_losses, std::span<const double> pi_values) {
    if (weighted_losses.size() != pi_values.size()) throw ContractError("selective_risk: length mismatch");
    const double zeta = coverage(pi_values);
    if (zeta < 1e-6) throw NumericError("selective_risk: coverage collapsed below 1e-6");
    double num = 0.0;
    for (double l : weighted_losses) num += l;
    num /= static_cast<double>(weighted_losses.size());
    return num / zeta;
}

Route route(double pi_value) {
    if (pi_value < 0.0 || pi_value > 1.0) throw ContractError("route: value outside [0,1]");
    return pi_value >= 0.5 ? Route::Expert : Route::Residual;
}

void JointBatch::validate(int num_classes) const {
    if (concepts.rows == 0) throw InputError("JointBatch: empty");
    if (teacher_logits.rows != concepts.rows || teacher_logits.cols != num_classes)
        throw ContractError("JointBatch: teacher logits shape mismatch");
    if (static_cast<int>(labels.size()) != concepts.rows) throw ContractError("JointBatch: label count mismatch");
    if (static_cast<int>(history_weight.size()) != concepts.rows)
        throw ContractError("JointBatch: history weight count mismatch");
}

JointLossBreakdown joint_loss(const elen::ElenExpert& expert, const Selector& sel, const JointBatch& batch,
                              const elen::DistillConfig& dcfg, const SelectiveLossCfg& scfg,
                              std::span<double> grad) {
    expert.validate();
    sel.validate();
    scfg.validate();
    batch.validate(expert.num_classes);
    const int m = batch.size();
    const bool want_grad = !grad.empty();
    const std::size_t n_expert = expert.param_count();
    if (want_grad && grad.size() != n_expert + sel.gate.param_count())
        throw ContractError("joint_loss: grad buffer size mismatch");

    // forward: selector probabilities and per-sample expert losses
    const numcore::ForwardCache gate_cache = numcore::forward_cached(sel.gate, batch.concepts);
    const Matrix& pis = gate_cache.post.back();

    std::vector<elen::ElenForward> fwds;
    fwds.reserve(static_cast<std::size_t>(m));
    std::vector<double> distill(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        fwds.push_back(elen::elen_forward(expert, batch.concepts.row(j)));
        distill[static_cast<std::size_t>(j)] =
            elen::distill_loss(fwds.back().logits, batch.teacher_logits.row(j),
                               batch.labels[static_cast<std::size_t>(j)], dcfg);
    }
    const double ent = entropy_reg(expert);

    double num = 0.0, zeta = 0.0, aux_mean = 0.0;
    for (int j = 0; j < m; ++j) {
        const double lfull = distill[static_cast<std::size_t>(j)] + expert.lambda_lens * ent;
        num += lfull * pis(j, 0) * batch.history_weight[static_cast<std::size_t>(j)];
        zeta += pis(j, 0);
        aux_mean += distill[static_cast<std::size_t>(j)];
    }
    num /= m;
    zeta /= m;
    aux_mean /= m;
    if (zeta < 1e-6) throw NumericError("joint_loss: coverage collapsed below 1e-6");

    JointLossBreakdown out;
    out.zeta = zeta;
    out.risk = num / zeta;
    out.penalty = coverage_penalty(sel.tau, zeta, scfg.lambda_s);
    out.l_s = out.risk + out.penalty;
    out.l_aux = aux_mean + expert.lambda_lens * ent;
    out.total = scfg.alpha_mix * out.l_s + (1.0 - scfg.alpha_mix) * out.l_aux;

    if (!want_grad) return out;

    std::fill(grad.begin(), grad.end(), 0.0);
    auto expert_grad = grad.first(n_expert);
    auto gate_grad = grad.subspan(n_expert);

    const double dpen_dzeta = -2.0 * scfg.lambda_s * std::max(0.0, sel.tau - zeta);
    Matrix dpi(m, 1);
    double dloss_dent = (1.0 - scfg.alpha_mix) * expert.lambda_lens;
    for (int j = 0; j < m; ++j) {
        const double w = batch.history_weight[static_cast<std::size_t>(j)];
        const double lfull = distill[static_cast<std::size_t>(j)] + expert.lambda_lens * ent;
        // d(total)/d(pi_j)
        dpi(j, 0) = scfg.alpha_mix * ((lfull * w / m) / zeta - num / (zeta * zeta * m) + dpen_dzeta / m);
        // d(total)/d(distill_j)
        const double ddistill = scfg.alpha_mix * pis(j, 0) * w / (m * zeta) + (1.0 - scfg.alpha_mix) / m;
        dloss_dent += scfg.alpha_mix * expert.lambda_lens * pis(j, 0) * w / (m * zeta);
        auto dlogits = elen::distill_loss_grad(fwds[static_cast<std::size_t>(j)].logits, batch.teacher_logits.row(j),
                                               batch.labels[static_cast<std::size_t>(j)], dcfg);
        for (double& g : dlogits) g *= ddistill;
        elen::elen_backward(expert, fwds[static_cast<std::size_t>(j)], dlogits, expert_grad);
    }
    elen::entropy_reg_backward(expert, dloss_dent, expert_grad);
    numcore::backward(sel.gate, gate_cache, dpi, gate_grad);
    return out;
}

nlohmann::json selector_to_json(const Selector& sel) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["tau"] = sel.tau;
    j["lambda_s"] = sel.lambda_s;
    j["gate"] = numcore::dense_to_json(sel.gate);
    return j;
}

Selector selector_from_json(const nlohmann::json& j) {
    Selector s;
    s.tau = j.at("tau").get<double>();
    s.lambda_s = j.at("lambda_s").get<double>();
    s.gate = numcore::dense_from_json(j.at("gate"));
    s.validate();
    return s;
}

}  // namespace moie::selector
