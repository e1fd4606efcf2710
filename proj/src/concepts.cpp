#include "moie/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace moie::concepts {

const char* bank_mode_name(BankMode m) { return m == BankMode::Probe ? "probe" : "cav"; }

BankMode bank_mode_from_name(const std::string& s) {
    if (s == "probe") return BankMode::Probe;
    if (s == "cav") return BankMode::Cav;
    throw InputError("unknown concept bank mode: " + s);
}

void ConceptBank::validate() const {
    const int n = n_concepts();
    if (n == 0) throw ContractError("ConceptBank: empty");
    if (static_cast<int>(names.size()) != n || static_cast<int>(biases.size()) != n ||
        static_cast<int>(scores.size()) != n)
        throw ContractError("ConceptBank: field sizes disagree");
    for (int i = 0; i < n; ++i) {
        double norm2 = 0.0;
        for (double v : directions.row(i)) norm2 += v * v;
        if (norm2 <= 0.0) throw ContractError("ConceptBank: zero-norm direction for " + names[static_cast<std::size_t>(i)]);
        if (scores[static_cast<std::size_t>(i)] < 0.0 || scores[static_cast<std::size_t>(i)] > 1.0)
            throw ContractError("ConceptBank: score outside [0,1]");
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t k = i + 1; k < names.size(); ++k)
            if (names[i] == names[k]) throw ContractError("ConceptBank: duplicate name " + names[i]);
}

namespace {

struct LinearModel {
    std::vector<double> w;
    double b = 0.0;
};

// Hinge loss + L2, full-batch gradient descent with Adam. Targets in {0,1}.
LinearModel fit_hinge(const Matrix& x, const std::vector<std::uint8_t>& y, const ProbeConfig& cfg,
                      std::uint64_t seed) {
    const int m = x.rows, d = x.cols;
    LinearModel model;
    model.w.assign(static_cast<std::size_t>(d), 0.0);
    Rng rng(seed);
    const double a = std::sqrt(6.0 / (d + 1));
    for (double& v : model.w) v = rng.uniform(-a, a);

    std::vector<double> params(model.w);
    params.push_back(model.b);
    numcore::OptState opt({numcore::OptKind::Adam, cfg.lr}, params.size(), seed);
    std::vector<double> grad(params.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (int j = 0; j < m; ++j) {
            const double t = y[static_cast<std::size_t>(j)] ? 1.0 : -1.0;
            double s = params[static_cast<std::size_t>(d)];
            const double* xr = x.data.data() + static_cast<std::size_t>(j) * d;
            for (int i = 0; i < d; ++i) s += params[static_cast<std::size_t>(i)] * xr[i];
            if (t * s < 1.0) {
                for (int i = 0; i < d; ++i) grad[static_cast<std::size_t>(i)] += -t * xr[i] / m;
                grad[static_cast<std::size_t>(d)] += -t / m;
            }
        }
        for (int i = 0; i < d; ++i) grad[static_cast<std::size_t>(i)] += 2.0 * cfg.l2 * params[static_cast<std::size_t>(i)];
        opt.apply(params, grad);
    }
    model.w.assign(params.begin(), params.begin() + d);
    model.b = params[static_cast<std::size_t>(d)];
    return model;
}

double mean_hinge(const Matrix& x, const std::vector<std::uint8_t>& y, const LinearModel& model) {
    double total = 0.0;
    for (int j = 0; j < x.rows; ++j) {
        const double t = y[static_cast<std::size_t>(j)] ? 1.0 : -1.0;
        double s = model.b;
        const double* xr = x.data.data() + static_cast<std::size_t>(j) * x.cols;
        for (int i = 0; i < x.cols; ++i) s += model.w[static_cast<std::size_t>(i)] * xr[i];
        total += std::max(0.0, 1.0 - t * s);
    }
    return total / x.rows;
}

std::vector<std::uint8_t> binary_targets(const Matrix& values, int col) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(values.rows));
    for (int j = 0; j < values.rows; ++j) out[static_cast<std::size_t>(j)] = values(j, col) > 0.5 ? 1 : 0;
    return out;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size() || scores.empty()) throw ContractError("auroc: bad input sizes");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // average ranks over ties
    std::vector<double> rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t k = i;
        while (k + 1 < order.size() && scores[order[k + 1]] == scores[order[i]]) ++k;
        const double avg = (static_cast<double>(i) + static_cast<double>(k)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= k; ++t) rank[order[t]] = avg;
        i = k + 1;
    }
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t j = 0; j < labels.size(); ++j)
        if (labels[j]) {
            pos_rank_sum += rank[j];
            ++n_pos;
        }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return 0.5;
    const double u = pos_rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ConceptBank train_probes(const data::Dataset& train, const data::Dataset& val, const ProbeConfig& cfg) {
    train.validate();
    val.validate();
    if (train.embed_dim() != val.embed_dim() || train.n_concepts() != val.n_concepts())
        throw ContractError("train_probes: train/val shape mismatch");

    const int n_c = train.n_concepts();
    ConceptBank bank;
    bank.mode = BankMode::Probe;
    bank.directions = Matrix(n_c, train.embed_dim());
    bank.biases.assign(static_cast<std::size_t>(n_c), 0.0);
    bank.scores.assign(static_cast<std::size_t>(n_c), 0.0);
    bank.names = train.concept_names;
    if (bank.names.empty())
        for (int c = 0; c < n_c; ++c) bank.names.push_back("concept_" + std::to_string(c));

    for (int c = 0; c < n_c; ++c) {
        const auto y_train = binary_targets(train.concepts, c);
        const auto y_val = binary_targets(val.concepts, c);
        // per-concept stream keyed by the concept's name, so column order
        // does not change any individual probe
        std::uint64_t key = 1469598103934665603ULL;
        for (const char ch : bank.names[static_cast<std::size_t>(c)]) {
            key ^= static_cast<unsigned char>(ch);
            key *= 1099511628211ULL;
        }
        const std::uint64_t seed = derive_seed(cfg.seed, key);

        const std::size_t pos = static_cast<std::size_t>(std::count(y_train.begin(), y_train.end(), 1));
        if (pos == 0 || pos == y_train.size()) {
            log::warn("train_probes: concept " + bank.names[static_cast<std::size_t>(c)] +
                      " is constant in training data; flagged degenerate");
            Rng rng(seed);
            double norm2 = 0.0;
            for (int i = 0; i < train.embed_dim(); ++i) {
                bank.directions(c, i) = rng.normal();
                norm2 += bank.directions(c, i) * bank.directions(c, i);
            }
            for (int i = 0; i < train.embed_dim(); ++i) bank.directions(c, i) /= std::sqrt(norm2);
            bank.scores[static_cast<std::size_t>(c)] = 0.5;
            continue;
        }

        const LinearModel model = fit_hinge(train.embeddings, y_train, cfg, seed);
        for (int i = 0; i < train.embed_dim(); ++i) bank.directions(c, i) = model.w[static_cast<std::size_t>(i)];
        bank.biases[static_cast<std::size_t>(c)] = model.b;

        // validation score: accuracy when reasonably balanced, AUROC otherwise
        std::vector<double> val_scores(static_cast<std::size_t>(val.size()));
        for (int j = 0; j < val.size(); ++j) {
            double s = model.b;
            for (int i = 0; i < val.embed_dim(); ++i) s += model.w[static_cast<std::size_t>(i)] * val.embeddings(j, i);
            val_scores[static_cast<std::size_t>(j)] = s;
        }
        const double prevalence =
            static_cast<double>(std::count(y_val.begin(), y_val.end(), 1)) / static_cast<double>(y_val.size());
        if (prevalence < cfg.auroc_prevalence || prevalence > 1.0 - cfg.auroc_prevalence) {
            bank.scores[static_cast<std::size_t>(c)] = auroc(val_scores, y_val);
        } else {
            int correct = 0;
            for (std::size_t j = 0; j < val_scores.size(); ++j)
                if ((val_scores[j] > 0.0 ? 1 : 0) == y_val[j]) ++correct;
            bank.scores[static_cast<std::size_t>(c)] = static_cast<double>(correct) / static_cast<double>(y_val.size());
        }
    }
    bank.validate();
    return bank;
}

CavResult cav_train(const Matrix& pos_embeddings, const Matrix& neg_embeddings, const ProbeConfig& cfg) {
    if (pos_embeddings.rows == 0 || neg_embeddings.rows == 0)
        throw InputError("cav_train: both embedding sets must be non-empty");
    if (pos_embeddings.cols != neg_embeddings.cols) throw ContractError("cav_train: embedding dims differ");
    Matrix x(pos_embeddings.rows + neg_embeddings.rows, pos_embeddings.cols);
    std::vector<std::uint8_t> y(static_cast<std::size_t>(x.rows));
    for (int j = 0; j < pos_embeddings.rows; ++j) {
        std::copy(pos_embeddings.row(j).begin(), pos_embeddings.row(j).end(), x.row(j).begin());
        y[static_cast<std::size_t>(j)] = 1;
    }
    for (int j = 0; j < neg_embeddings.rows; ++j)
        std::copy(neg_embeddings.row(j).begin(), neg_embeddings.row(j).end(), x.row(pos_embeddings.rows + j).begin());

    const LinearModel model = fit_hinge(x, y, cfg, derive_seed(cfg.seed, 777));
    CavResult out;
    out.direction = model.w;
    out.bias = model.b;
    out.train_hinge = mean_hinge(x, y, model);
    return out;
}

std::vector<double> cav_score(std::span<const double> embedding, const ConceptBank& bank) {
    if (static_cast<int>(embedding.size()) != bank.embed_dim()) throw ContractError("cav_score: embedding dim mismatch");
    std::vector<double> out(static_cast<std::size_t>(bank.n_concepts()));
    for (int c = 0; c < bank.n_concepts(); ++c) {
        double dot = 0.0, norm2 = 0.0;
        const auto q = bank.directions.row(c);
        for (int i = 0; i < bank.embed_dim(); ++i) {
            dot += embedding[static_cast<std::size_t>(i)] * q[static_cast<std::size_t>(i)];
            norm2 += q[static_cast<std::size_t>(i)] * q[static_cast<std::size_t>(i)];
        }
        if (norm2 <= 0.0) throw ContractError("cav_score: zero-norm direction");
        out[static_cast<std::size_t>(c)] = dot / norm2;
    }
    return out;
}

Matrix predict_concepts(const ConceptBank& bank, const Matrix& embeddings) {
    if (embeddings.cols != bank.embed_dim()) throw ContractError("predict_concepts: embedding dim mismatch");
    Matrix out(embeddings.rows, bank.n_concepts());
    for (int j = 0; j < embeddings.rows; ++j) {
        if (bank.mode == BankMode::Cav) {
            const auto scores = cav_score(embeddings.row(j), bank);
            std::copy(scores.begin(), scores.end(), out.row(j).begin());
        } else {
            for (int c = 0; c < bank.n_concepts(); ++c) {
                double s = bank.biases[static_cast<std::size_t>(c)];
                const auto q = bank.directions.row(c);
                for (int i = 0; i < bank.embed_dim(); ++i)
                    s += q[static_cast<std::size_t>(i)] * embeddings(j, i);
                out(j, c) = numcore::sigmoid(s);
            }
        }
    }
    return out;
}

std::vector<int> filter_concepts(const ConceptBank& bank, double threshold) {
    if (bank.scores.empty()) throw ContractError("filter_concepts: scores not populated");
    std::vector<int> keep;
    for (int c = 0; c < bank.n_concepts(); ++c)
        if (bank.scores[static_cast<std::size_t>(c)] > threshold) keep.push_back(c);
    if (keep.empty()) throw PipelineError("no usable concepts: every validation score <= " + std::to_string(threshold));
    return keep;
}

nlohmann::json bank_to_json(const ConceptBank& bank) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["mode"] = bank_mode_name(bank.mode);
    j["names"] = bank.names;
    j["embed_dim"] = bank.embed_dim();
    j["directions"] = bank.directions.data;  // row-major
    j["biases"] = bank.biases;
    j["scores"] = bank.scores;
    return j;
}

ConceptBank bank_from_json(const nlohmann::json& j) {
    ConceptBank bank;
    bank.mode = bank_mode_from_name(j.at("mode").get<std::string>());
    bank.names = j.at("names").get<std::vector<std::string>>();
    const int l = j.at("embed_dim").get<int>();
    bank.directions = Matrix(static_cast<int>(bank.names.size()), l);
    bank.directions.data = j.at("directions").get<std::vector<double>>();
    if (bank.directions.data.size() != bank.names.size() * static_cast<std::size_t>(l))
        throw ParseError("concept bank: direction size mismatch");
    bank.biases = j.at("biases").get<std::vector<double>>();
    bank.scores = j.at("scores").get<std::vector<double>>();
    bank.validate();
    return bank;
}

void save_bank(const ConceptBank& bank, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    out << bank_to_json(bank).dump(2) << "\n";
}

ConceptBank load_bank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return bank_from_json(j);
}

}  // namespace moie::concepts
