#pragma once

// Independent direct evaluations of the objective pieces, used only to check
// the library implementations. Deliberately naive: long double accumulation,
// plain softmax sums, no shared helpers with the library.

#include <cmath>
#include <vector>

namespace oracle {

inline double selective_risk(const std::vector<double>& weighted_losses, const std::vector<double>& pi) {
    long double num = 0.0L, cov = 0.0L;
    for (double v : weighted_losses) num += v;
    for (double v : pi) cov += v;
    num /= static_cast<long double>(weighted_losses.size());
    cov /= static_cast<long double>(pi.size());
    return static_cast<double>(num / cov);
}

inline double routing_weight(const std::vector<double>& history, double pi_k) {
    long double w = pi_k;
    for (double p : history) w *= (1.0L - static_cast<long double>(p));
    return static_cast<double>(w);
}

inline double residual_weight(const std::vector<double>& through_k) {
    long double w = 1.0L;
    for (double p : through_k) w *= (1.0L - static_cast<long double>(p));
    return static_cast<double>(w);
}

inline double psi_penalty(double tau, double zeta, double lambda_s) {
    const long double a = static_cast<long double>(tau) - static_cast<long double>(zeta);
    const long double h = a > 0.0L ? a : 0.0L;
    return static_cast<double>(lambda_s * h * h);
}

inline std::vector<long double> softmax_ld(const std::vector<double>& logits, double temperature) {
    std::vector<long double> p(logits.size());
    long double sum = 0.0L;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = expl(static_cast<long double>(logits[i]) / temperature);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

inline double distill_loss(const std::vector<double>& student, const std::vector<double>& teacher, int label,
                           double alpha_kd, double t_kd) {
    const auto q = softmax_ld(student, t_kd);
    const auto p = softmax_ld(teacher, t_kd);
    long double kl = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * (logl(p[i]) - logl(q[i]));
    long double loss = alpha_kd * t_kd * t_kd * kl;
    const auto s1 = softmax_ld(student, 1.0);
    loss += (1.0L - static_cast<long double>(alpha_kd)) * (-logl(s1[static_cast<std::size_t>(label)]));
    return static_cast<double>(loss);
}

// sum over rows of the Shannon entropy of softmax(gamma_row / t_lens)
inline double entropy_reg(const std::vector<std::vector<double>>& gamma_rows, double t_lens) {
    long double total = 0.0L;
    for (const auto& row : gamma_rows) {
        const auto p = softmax_ld(row, t_lens);
        for (auto v : p) total -= v * logl(v);
    }
    return static_cast<double>(total);
}

struct JointPieces {
    double risk, penalty, l_s, l_aux, total;
};

// Appendix composition: L_s = R + psi, L_aux = mean distill + lens entropy,
// L = a L_s + (1-a) L_aux. Per-sample full losses already include the entropy
// term; the risk numerator carries pi and the frozen history weight.
inline JointPieces joint_loss(const std::vector<double>& distill, double entropy, double lambda_lens,
                              const std::vector<double>& pi, const std::vector<double>& history, double tau,
                              double lambda_s, double alpha_mix) {
    const std::size_t m = distill.size();
    long double num = 0.0L, cov = 0.0L, aux = 0.0L;
    for (std::size_t j = 0; j < m; ++j) {
        const long double full = distill[j] + static_cast<long double>(lambda_lens) * entropy;
        num += full * pi[j] * history[j];
        cov += pi[j];
        aux += distill[j];
    }
    num /= static_cast<long double>(m);
    cov /= static_cast<long double>(m);
    aux = aux / static_cast<long double>(m) + static_cast<long double>(lambda_lens) * entropy;

    JointPieces out;
    out.risk = static_cast<double>(num / cov);
    out.penalty = psi_penalty(tau, static_cast<double>(cov), lambda_s);
    out.l_s = out.risk + out.penalty;
    out.l_aux = static_cast<double>(aux);
    out.total = alpha_mix * out.l_s + (1.0 - alpha_mix) * out.l_aux;
    return out;
}

}  // namespace oracle
