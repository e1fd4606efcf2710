#include "moie/elen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace moie::elen {

void DistillConfig::validate() const {
    if (alpha_kd < 0.0 || alpha_kd > 1.0) throw ContractError("DistillConfig: alpha_kd must be in [0,1]");
    if (t_kd <= 0.0) throw ContractError("DistillConfig: t_kd must be positive");
}

std::vector<double> ElenExpert::get_params() const {
    std::vector<double> flat = gamma.data;
    const auto trunk_params = trunk.get_params();
    flat.insert(flat.end(), trunk_params.begin(), trunk_params.end());
    return flat;
}

void ElenExpert::set_params(std::span<const double> flat) {
    if (flat.size() != param_count()) throw ContractError("ElenExpert::set_params: size mismatch");
    std::copy(flat.begin(), flat.begin() + gamma.size(), gamma.data.begin());
    trunk.set_params(flat.subspan(gamma.size()));
}

void ElenExpert::validate() const {
    if (t_lens <= 0.0) throw ContractError("ElenExpert: t_lens must be positive");
    if (gamma.rows != num_classes) throw ContractError("ElenExpert: gamma rows != num_classes");
    if (trunk.input_dim() != n_used() || trunk.output_dim() != num_classes)
        throw ContractError("ElenExpert: trunk dims do not match");
    if (!concept_indices.empty() && static_cast<int>(concept_indices.size()) != n_used())
        throw ContractError("ElenExpert: concept index set size mismatch");
    if (!gamma.all_finite()) throw NumericError("ElenExpert: non-finite gamma");
}

ElenExpert init_expert(int num_classes, int n_used, const std::vector<int>& hidden, double t_lens,
                       double lambda_lens, const std::vector<int>& concept_indices, std::uint64_t seed) {
    ElenExpert e;
    e.num_classes = num_classes;
    e.t_lens = t_lens;
    e.lambda_lens = lambda_lens;
    e.concept_indices = concept_indices;
    e.gamma = Matrix(num_classes, n_used);  // uniform attention at init
    std::vector<int> dims{n_used};
    std::vector<numcore::Activation> acts;
    for (int h : hidden) {
        dims.push_back(h);
        acts.push_back(numcore::Activation::Relu);
    }
    dims.push_back(num_classes);
    acts.push_back(numcore::Activation::Identity);
    e.trunk = numcore::init_dense(dims, acts, derive_seed(seed, 12));
    e.validate();
    return e;
}

Matrix attention(const ElenExpert& expert) {
    Matrix a(expert.gamma.rows, expert.gamma.cols);
    for (int i = 0; i < expert.gamma.rows; ++i) {
        std::vector<double> scaled(static_cast<std::size_t>(expert.gamma.cols));
        for (int c = 0; c < expert.gamma.cols; ++c) scaled[static_cast<std::size_t>(c)] = expert.gamma(i, c) / expert.t_lens;
        const auto sm = numcore::softmax(scaled);
        std::copy(sm.begin(), sm.end(), a.row(i).begin());
    }
    return a;
}

ElenForward elen_forward(const ElenExpert& expert, std::span<const double> concepts) {
    expert.validate();
    if (static_cast<int>(concepts.size()) != expert.n_used())
        throw ContractError("elen_forward: concept vector does not match the expert's concept set");
    ElenForward fwd;
    fwd.input.assign(concepts.begin(), concepts.end());
    fwd.attn = attention(expert);
    fwd.modulated = Matrix(expert.num_classes, expert.n_used());
    for (int i = 0; i < expert.num_classes; ++i) {
        const auto row = fwd.attn.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        for (int c = 0; c < expert.n_used(); ++c)
            fwd.modulated(i, c) = concepts[static_cast<std::size_t>(c)] * row[static_cast<std::size_t>(c)] / mx;
    }
    fwd.trunk_cache = numcore::forward_cached(expert.trunk, fwd.modulated);
    const Matrix& out = fwd.trunk_cache.post.back();
    fwd.logits.resize(static_cast<std::size_t>(expert.num_classes));
    for (int i = 0; i < expert.num_classes; ++i) {
        fwd.logits[static_cast<std::size_t>(i)] = out(i, i);
        if (!std::isfinite(fwd.logits[static_cast<std::size_t>(i)])) throw NumericError("elen_forward: non-finite logit");
    }
    return fwd;
}

Matrix elen_logits(const ElenExpert& expert, const Matrix& concepts) {
    Matrix out(concepts.rows, expert.num_classes);
    for (int j = 0; j < concepts.rows; ++j) {
        const auto fwd = elen_forward(expert, concepts.row(j));
        std::copy(fwd.logits.begin(), fwd.logits.end(), out.row(j).begin());
    }
    return out;
}

void elen_backward(const ElenExpert& expert, const ElenForward& fwd, std::span<const double> dlogits,
                   std::span<double> grad_flat) {
    if (dlogits.size() != static_cast<std::size_t>(expert.num_classes)) throw ContractError("elen_backward: dlogits size");
    if (grad_flat.size() != expert.param_count()) throw ContractError("elen_backward: grad buffer size");

    // trunk sees one row per class; only output (i, i) carries gradient
    Matrix dout(expert.num_classes, expert.num_classes);
    for (int i = 0; i < expert.num_classes; ++i) dout(i, i) = dlogits[static_cast<std::size_t>(i)];
    Matrix dmod;
    numcore::backward(expert.trunk, fwd.trunk_cache, dout, grad_flat.subspan(expert.gamma.size()), &dmod);

    for (int i = 0; i < expert.num_classes; ++i) {
        const auto arow = fwd.attn.row(i);
        int arg = 0;
        for (int c = 1; c < expert.n_used(); ++c)
            if (arow[static_cast<std::size_t>(c)] > arow[static_cast<std::size_t>(arg)]) arg = c;
        const double mx = arow[static_cast<std::size_t>(arg)];

        // modulated = c * alpha/mx ; d(modulated_c)/d(alpha_c) = input_c/mx,
        // d(modulated_c)/d(alpha_arg) = -input_c*alpha_c/mx^2 (c != arg);
        // the argmax entry itself is constant 1 * input.
        std::vector<double> dalpha(static_cast<std::size_t>(expert.n_used()), 0.0);
        for (int c = 0; c < expert.n_used(); ++c) {
            const double up = dmod(i, c) * fwd.input[static_cast<std::size_t>(c)];
            if (c == arg) continue;
            dalpha[static_cast<std::size_t>(c)] += up / mx;
            dalpha[static_cast<std::size_t>(arg)] -= up * arow[static_cast<std::size_t>(c)] / (mx * mx);
        }

        // softmax backward: ds_c = alpha_c * (dalpha_c - sum_k alpha_k dalpha_k); gamma = s * t_lens
        double dot = 0.0;
        for (int c = 0; c < expert.n_used(); ++c) dot += arow[static_cast<std::size_t>(c)] * dalpha[static_cast<std::size_t>(c)];
        for (int c = 0; c < expert.n_used(); ++c) {
            const double ds = arow[static_cast<std::size_t>(c)] * (dalpha[static_cast<std::size_t>(c)] - dot);
            grad_flat[static_cast<std::size_t>(i) * expert.n_used() + static_cast<std::size_t>(c)] += ds / expert.t_lens;
        }
    }
}

double entropy_reg(const ElenExpert& expert) {
    const Matrix a = attention(expert);
    double total = 0.0;
    for (int i = 0; i < a.rows; ++i)
        for (int c = 0; c < a.cols; ++c) total -= a(i, c) * std::log(a(i, c));
    return total;
}

void entropy_reg_backward(const ElenExpert& expert, double upstream, std::span<double> grad_flat) {
    if (grad_flat.size() < expert.gamma.size()) throw ContractError("entropy_reg_backward: grad buffer size");
    const Matrix a = attention(expert);
    for (int i = 0; i < a.rows; ++i) {
        // dH/dalpha_c = -(log alpha_c + 1); fold through softmax.
        std::vector<double> dalpha(static_cast<std::size_t>(a.cols));
        for (int c = 0; c < a.cols; ++c) dalpha[static_cast<std::size_t>(c)] = -(std::log(a(i, c)) + 1.0);
        double dot = 0.0;
        for (int c = 0; c < a.cols; ++c) dot += a(i, c) * dalpha[static_cast<std::size_t>(c)];
        for (int c = 0; c < a.cols; ++c) {
            const double ds = a(i, c) * (dalpha[static_cast<std::size_t>(c)] - dot);
            grad_flat[static_cast<std::size_t>(i) * a.cols + static_cast<std::size_t>(c)] += upstream * ds / expert.t_lens;
        }
    }
}

double distill_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, int label,
                    const DistillConfig& cfg) {
    cfg.validate();
    if (student_logits.size() != teacher_logits.size()) throw ContractError("distill_loss: logit lengths differ");
    for (double v : student_logits)
        if (!std::isfinite(v)) throw NumericError("distill_loss: non-finite student logit");
    for (double v : teacher_logits)
        if (!std::isfinite(v)) throw NumericError("distill_loss: non-finite teacher logit");

    // logit_match_loss already carries the T^2 factor
    double loss = cfg.alpha_kd * logit_match_loss(student_logits, teacher_logits, cfg.t_kd);
    if (cfg.alpha_kd < 1.0) loss += (1.0 - cfg.alpha_kd) * numcore::cross_entropy(student_logits, label);
    return loss;
}

std::vector<double> distill_loss_grad(std::span<const double> student_logits, std::span<const double> teacher_logits,
                                      int label, const DistillConfig& cfg) {
    cfg.validate();
    std::vector<double> grad = logit_match_grad(student_logits, teacher_logits, cfg.t_kd);
    for (double& g : grad) g *= cfg.alpha_kd;
    if (cfg.alpha_kd < 1.0) {
        const auto p = numcore::softmax(student_logits);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            double ce = p[i];
            if (static_cast<int>(i) == label) ce -= 1.0;
            grad[i] += (1.0 - cfg.alpha_kd) * ce;
        }
    }
    return grad;
}

double logit_match_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, double t) {
    if (t <= 0.0) throw ContractError("logit_match_loss: temperature must be positive");
    if (student_logits.size() != teacher_logits.size()) throw ContractError("logit_match_loss: logit lengths differ");
    std::vector<double> ss(student_logits.size()), ts(teacher_logits.size());
    for (std::size_t i = 0; i < ss.size(); ++i) {
        ss[i] = student_logits[i] / t;
        ts[i] = teacher_logits[i] / t;
    }
    const auto log_q = numcore::log_softmax(ss);
    const auto log_p = numcore::log_softmax(ts);
    double kl = 0.0;
    for (std::size_t i = 0; i < ss.size(); ++i) kl += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
    return t * t * kl;
}

std::vector<double> logit_match_grad(std::span<const double> student_logits, std::span<const double> teacher_logits,
                                     double t) {
    std::vector<double> ss(student_logits.size()), ts(teacher_logits.size());
    for (std::size_t i = 0; i < ss.size(); ++i) {
        ss[i] = student_logits[i] / t;
        ts[i] = teacher_logits[i] / t;
    }
    const auto q = numcore::softmax(ss);
    const auto p = numcore::softmax(ts);
    std::vector<double> grad(ss.size());
    // d/ds_i [t^2 KL] with s = student/t collapses to t * (q_i - p_i)
    for (std::size_t i = 0; i < ss.size(); ++i) grad[i] = t * (q[i] - p[i]);
    return grad;
}

double expert_sample_loss(const ElenExpert& expert, std::span<const double> teacher_logits,
                          std::span<const double> concepts, int label, const DistillConfig& cfg) {
    const auto fwd = elen_forward(expert, concepts);
    return distill_loss(fwd.logits, teacher_logits, label, cfg) + expert.lambda_lens * entropy_reg(expert);
}

std::vector<int> top_concepts(const ElenExpert& expert, int class_id, int n) {
    if (class_id < 0 || class_id >= expert.num_classes) throw ContractError("top_concepts: class out of range");
    if (n < 0 || n > expert.n_used()) throw ContractError("top_concepts: n out of range");
    const Matrix a = attention(expert);
    std::vector<int> idx(static_cast<std::size_t>(expert.n_used()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int lhs, int rhs) { return a(class_id, lhs) > a(class_id, rhs); });
    idx.resize(static_cast<std::size_t>(n));
    return idx;
}

std::vector<int> to_full_indices(const ElenExpert& expert, std::span<const int> local) {
    std::vector<int> out;
    out.reserve(local.size());
    for (int l : local) {
        if (l < 0 || l >= expert.n_used()) throw ContractError("to_full_indices: local index out of range");
        out.push_back(expert.concept_indices.empty() ? l : expert.concept_indices[static_cast<std::size_t>(l)]);
    }
    return out;
}

nlohmann::json expert_to_json(const ElenExpert& expert) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["num_classes"] = expert.num_classes;
    j["n_used"] = expert.n_used();
    j["t_lens"] = expert.t_lens;
    j["lambda_lens"] = expert.lambda_lens;
    j["gamma"] = expert.gamma.data;
    j["concept_indices"] = expert.concept_indices;
    j["trunk"] = numcore::dense_to_json(expert.trunk);
    return j;
}

ElenExpert expert_from_json(const nlohmann::json& j) {
    ElenExpert e;
    e.num_classes = j.at("num_classes").get<int>();
    const int n_used = j.at("n_used").get<int>();
    e.t_lens = j.at("t_lens").get<double>();
    e.lambda_lens = j.at("lambda_lens").get<double>();
    e.gamma = Matrix(e.num_classes, n_used);
    e.gamma.data = j.at("gamma").get<std::vector<double>>();
    if (e.gamma.data.size() != static_cast<std::size_t>(e.num_classes) * n_used)
        throw ParseError("expert checkpoint: gamma size mismatch");
    e.concept_indices = j.at("concept_indices").get<std::vector<int>>();
    e.trunk = numcore::dense_from_json(j.at("trunk"));
    e.validate();
    return e;
}

}  // namespace moie::elen
