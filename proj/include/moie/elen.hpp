#pragma once

#include <span>
#include <vector>

#include "moie/numcore.hpp"

namespace moie::elen {

struct DistillConfig {
    double alpha_kd = 0.9;  // weight of the teacher KL term
    double t_kd = 10.0;     // distillation temperature

    void validate() const;
};

// Interpretable expert: per-class concept attention (softmax of relevance
// scores at temperature t_lens) modulating the concept vector before a small
// dense trunk; one trunk output per class.
struct ElenExpert {
    Matrix gamma;      // relevance scores [num_classes x n_used]
    double t_lens = 0.7;
    numcore::DenseNet trunk;  // n_used -> hidden -> num_classes
    double lambda_lens = 1e-4;
    int num_classes = 0;
    std::vector<int> concept_indices;  // positions in the full concept vector

    int n_used() const { return gamma.cols; }
    std::size_t param_count() const { return gamma.size() + trunk.param_count(); }
    std::vector<double> get_params() const;
    void set_params(std::span<const double> flat);
    void validate() const;
};

ElenExpert init_expert(int num_classes, int n_used, const std::vector<int>& hidden, double t_lens,
                       double lambda_lens, const std::vector<int>& concept_indices, std::uint64_t seed);

// Row i = softmax(gamma_i / t_lens).
Matrix attention(const ElenExpert& expert);

struct ElenForward {
    std::vector<double> logits;  // [num_classes]
    Matrix attn;                 // [num_classes x n_used]
    Matrix modulated;            // [num_classes x n_used], c * attn_row/max(attn_row)
    numcore::ForwardCache trunk_cache;
    std::vector<double> input;   // concept sub-vector
};

// Per class i the input is c * (attn_i / max attn_i) fed through the trunk;
// the class-i logit is the trunk's i-th output on that row.
ElenForward elen_forward(const ElenExpert& expert, std::span<const double> concepts);

// Logits only, for a batch of concept rows (columns already sub-selected).
Matrix elen_logits(const ElenExpert& expert, const Matrix& concepts);

// Accumulate d(loss)/d(params) into grad_flat (gamma block then trunk block)
// given d(loss)/d(logits) for the recorded forward.
void elen_backward(const ElenExpert& expert, const ElenForward& fwd, std::span<const double> dlogits,
                   std::span<double> grad_flat);

// Sum over classes of the Shannon entropy (nats) of the attention rows.
double entropy_reg(const ElenExpert& expert);
// Adds upstream * d(entropy_reg)/d(gamma) into the gamma block of grad_flat.
void entropy_reg_backward(const ElenExpert& expert, double upstream, std::span<double> grad_flat);

// (alpha * T^2) * KL(softmax(teacher/T) || softmax(student/T)) +
// (1 - alpha) * CE(student, label).
double distill_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, int label,
                    const DistillConfig& cfg);
// d(distill_loss)/d(student_logits).
std::vector<double> distill_loss_grad(std::span<const double> student_logits, std::span<const double> teacher_logits,
                                      int label, const DistillConfig& cfg);

// Pure logit matching at temperature T (the distillation KL term alone).
double logit_match_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, double t);
std::vector<double> logit_match_grad(std::span<const double> student_logits, std::span<const double> teacher_logits,
                                     double t);

// distill_loss + lambda_lens * entropy_reg.
double expert_sample_loss(const ElenExpert& expert, std::span<const double> teacher_logits,
                          std::span<const double> concepts, int label, const DistillConfig& cfg);

// Positions of the N largest attention values for class_id, descending, ties
// broken toward the lower index. Positions are into the expert's attention
// row; map through concept_indices for full-space ids.
std::vector<int> top_concepts(const ElenExpert& expert, int class_id, int n);

std::vector<int> to_full_indices(const ElenExpert& expert, std::span<const int> local);

nlohmann::json expert_to_json(const ElenExpert& expert);
ElenExpert expert_from_json(const nlohmann::json& j);

}  // namespace moie::elen
