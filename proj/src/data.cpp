#include "moie/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace moie::data {

void Dataset::validate() const {
    const int m = size();
    if (m == 0) throw InputError("Dataset: empty");
    if (static_cast<int>(labels.size()) != m) throw ContractError("Dataset: label count != row count");
    if (concepts.rows != m) throw ContractError("Dataset: concept rows != row count");
    if (has_gt_concepts() && (gt_concepts.rows != m || gt_concepts.cols != concepts.cols))
        throw ContractError("Dataset: gt_concepts shape mismatch");
    if (has_subgroup() && static_cast<int>(subgroup.size()) != m) throw ContractError("Dataset: subgroup size mismatch");
    if (has_metadata() && metadata.rows != m) throw ContractError("Dataset: metadata rows mismatch");
    if (!concept_names.empty() && static_cast<int>(concept_names.size()) != concepts.cols)
        throw ContractError("Dataset: concept name count mismatch");
    for (int y : labels)
        if (y < 0 || y >= num_classes) throw ContractError("Dataset: label out of range");
    if (!embeddings.all_finite() || !concepts.all_finite()) throw NumericError("Dataset: non-finite values");
}

Dataset Dataset::select(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.name = name;
    out.seed = seed;
    out.num_classes = num_classes;
    out.concept_names = concept_names;
    out.embeddings = Matrix(static_cast<int>(idx.size()), embeddings.cols);
    out.concepts = Matrix(static_cast<int>(idx.size()), concepts.cols);
    if (has_gt_concepts()) out.gt_concepts = Matrix(static_cast<int>(idx.size()), gt_concepts.cols);
    if (has_metadata()) out.metadata = Matrix(static_cast<int>(idx.size()), metadata.cols);
    out.labels.reserve(idx.size());
    if (has_subgroup()) out.subgroup.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto s = idx[r];
        std::copy(embeddings.row(static_cast<int>(s)).begin(), embeddings.row(static_cast<int>(s)).end(),
                  out.embeddings.row(static_cast<int>(r)).begin());
        std::copy(concepts.row(static_cast<int>(s)).begin(), concepts.row(static_cast<int>(s)).end(),
                  out.concepts.row(static_cast<int>(r)).begin());
        if (has_gt_concepts())
            std::copy(gt_concepts.row(static_cast<int>(s)).begin(), gt_concepts.row(static_cast<int>(s)).end(),
                      out.gt_concepts.row(static_cast<int>(r)).begin());
        if (has_metadata())
            std::copy(metadata.row(static_cast<int>(s)).begin(), metadata.row(static_cast<int>(s)).end(),
                      out.metadata.row(static_cast<int>(r)).begin());
        out.labels.push_back(labels[s]);
        if (has_subgroup()) out.subgroup.push_back(subgroup[s]);
    }
    return out;
}

const char* rule_name(RuleKind k) {
    switch (k) {
        case RuleKind::XorPlusBit: return "xor-plus-bit";
        case RuleKind::TwoBit: return "two-bit";
        case RuleKind::Majority3: return "majority3";
        case RuleKind::SingleConcept: return "single-concept";
    }
    return "xor-plus-bit";
}

RuleKind rule_from_name(const std::string& s) {
    if (s == "xor-plus-bit") return RuleKind::XorPlusBit;
    if (s == "two-bit") return RuleKind::TwoBit;
    if (s == "majority3") return RuleKind::Majority3;
    if (s == "single-concept") return RuleKind::SingleConcept;
    throw InputError("unknown rule kind: " + s);
}

int SubgroupRule::num_classes() const {
    return kind == RuleKind::XorPlusBit || kind == RuleKind::TwoBit ? 4 : 2;
}

int SubgroupRule::eval(std::span<const std::uint8_t> bits) const {
    switch (kind) {
        case RuleKind::XorPlusBit: {
            const int a = bits[static_cast<std::size_t>(concept_ids[0])];
            const int b = bits[static_cast<std::size_t>(concept_ids[1])];
            const int c = bits[static_cast<std::size_t>(concept_ids[2])];
            return 2 * (a ^ b) + c;
        }
        case RuleKind::TwoBit:
            return 2 * bits[static_cast<std::size_t>(concept_ids[0])] +
                   bits[static_cast<std::size_t>(concept_ids[1])];
        case RuleKind::Majority3: {
            int s = 0;
            for (int i = 0; i < 3; ++i) s += bits[static_cast<std::size_t>(concept_ids[static_cast<std::size_t>(i)])];
            return s >= 2 ? 1 : 0;
        }
        case RuleKind::SingleConcept:
            return bits[static_cast<std::size_t>(concept_ids[0])];
    }
    return 0;
}

GenSpec GenSpec::default_spec() {
    GenSpec s;
    s.rules = {SubgroupRule{RuleKind::XorPlusBit, {0, 1, 2}}, SubgroupRule{RuleKind::XorPlusBit, {5, 6, 7}}};
    return s;
}

void GenSpec::validate() const {
    if (num_classes < 2) throw InputError("GenSpec: num_classes must be >= 2");
    if (n_concepts < 1) throw InputError("GenSpec: n_concepts must be >= 1");
    if (embed_dim < 1) throw InputError("GenSpec: embed_dim must be >= 1");
    if (n_subgroups != 1 && n_subgroups != 2) throw InputError("GenSpec: n_subgroups must be 1 or 2");
    if (static_cast<int>(rules.size()) != n_subgroups) throw InputError("GenSpec: one rule per subgroup required");
    if (rho < 0.0 || rho >= 1.0) throw InputError("GenSpec: rho must be in [0,1)");
    if (concept_noise < 0.0 || concept_noise > 1.0) throw InputError("GenSpec: concept_noise must be in [0,1]");
    if (train_m <= 0 || val_m <= 0 || test_m <= 0) throw InputError("GenSpec: split sizes must be positive");

    std::vector<int> seen;
    for (const auto& rule : rules) {
        const std::size_t want =
            rule.kind == RuleKind::SingleConcept ? 1 : (rule.kind == RuleKind::TwoBit ? 2 : 3);
        if (rule.concept_ids.size() != want) throw InputError("GenSpec: rule has wrong concept count");
        if (rule.num_classes() != num_classes) throw InputError("GenSpec: rule class count != num_classes");
        for (int c : rule.concept_ids) {
            if (c < 0 || c >= n_concepts) throw InputError("GenSpec: rule concept out of range");
            if (std::find(seen.begin(), seen.end(), c) != seen.end())
                throw InputError("GenSpec: rule concept subsets must be disjoint");
            seen.push_back(c);
        }
    }
    if (n_subgroups == 2) {
        if (subgroup_concept < 0 || subgroup_concept >= n_concepts)
            throw InputError("GenSpec: subgroup_concept out of range");
        if (std::find(seen.begin(), seen.end(), subgroup_concept) != seen.end())
            throw InputError("GenSpec: subgroup_concept collides with a rule concept");
        seen.push_back(subgroup_concept);
    }
    if (rho > 0.0) {
        if (hard_region_concepts.empty()) throw InputError("GenSpec: rho > 0 needs hard_region_concepts");
        for (int c : hard_region_concepts) {
            if (c < 0 || c >= n_concepts) throw InputError("GenSpec: hard region concept out of range");
            if (std::find(seen.begin(), seen.end(), c) != seen.end())
                throw InputError("GenSpec: hard region concepts must be free of rule/subgroup concepts");
        }
    }
    if (spurious.concept_index >= 0) {
        if (spurious.concept_index >= n_concepts) throw InputError("GenSpec: spurious concept out of range");
        if (std::find(seen.begin(), seen.end(), spurious.concept_index) != seen.end())
            throw InputError("GenSpec: spurious concept collides with rule/subgroup concepts");
        for (int c : hard_region_concepts)
            if (rho > 0.0 && c == spurious.concept_index)
                throw InputError("GenSpec: spurious concept collides with the hard region");
        if (spurious.train_corr < 0.0 || spurious.train_corr > 1.0 || spurious.test_corr < 0.0 ||
            spurious.test_corr > 1.0)
            throw InputError("GenSpec: spurious correlations must be in [0,1]");
        if (spurious.embed_gain <= 0.0) throw InputError("GenSpec: spurious embed_gain must be positive");
    }
}

namespace {

// Mixing matrix [l x (n_c + s)] with orthonormal columns (modified
// Gram-Schmidt over seeded gaussian draws), so each concept owns a clean
// unit direction in embedding space.
Matrix mixing_matrix(const GenSpec& spec) {
    Rng rng(spec.mixing_seed);
    const int in = spec.n_concepts + spec.n_subgroups;
    if (in > spec.embed_dim) throw InputError("GenSpec: embed_dim must be >= n_concepts + n_subgroups");
    Matrix w(spec.embed_dim, in);
    for (double& v : w.data) v = rng.normal(0.0, 1.0);
    for (int c = 0; c < in; ++c) {
        for (int prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (int r = 0; r < w.rows; ++r) dot += w(r, c) * w(r, prev);
            for (int r = 0; r < w.rows; ++r) w(r, c) -= dot * w(r, prev);
        }
        double norm = 0.0;
        for (int r = 0; r < w.rows; ++r) norm += w(r, c) * w(r, c);
        norm = std::sqrt(norm);
        if (norm < 1e-9) throw NumericError("mixing matrix degenerate");
        for (int r = 0; r < w.rows; ++r) w(r, c) /= norm;
    }
    if (spec.spurious.concept_index >= 0 && spec.spurious.embed_gain != 1.0) {
        for (int r = 0; r < w.rows; ++r) w(r, spec.spurious.concept_index) *= spec.spurious.embed_gain;
    }
    return w;
}

int spurious_target_bit(int label, int num_classes) { return 2 * label >= num_classes ? 1 : 0; }

Dataset generate_split(const GenSpec& spec, const Matrix& w, int m, double spur_corr, Rng& rng,
                       const std::string& name, std::uint64_t seed) {
    Dataset ds;
    ds.name = name;
    ds.seed = seed;
    ds.num_classes = spec.num_classes;
    ds.embeddings = Matrix(m, spec.embed_dim);
    ds.concepts = Matrix(m, spec.n_concepts);
    ds.gt_concepts = Matrix(m, spec.n_concepts);
    ds.labels.assign(static_cast<std::size_t>(m), 0);
    ds.subgroup.assign(static_cast<std::size_t>(m), 0);
    if (spec.spurious.concept_index >= 0) ds.metadata = Matrix(m, 1);
    for (int c = 0; c < spec.n_concepts; ++c) ds.concept_names.push_back("concept_" + std::to_string(c));

    double region_mass = 0.0;
    double p_in = 0.0, q_out = 0.0;
    if (spec.rho > 0.0) {
        region_mass = std::pow(0.5, static_cast<double>(spec.hard_region_concepts.size()));
        p_in = std::min(1.0, spec.rho / region_mass);
        q_out = std::max(0.0, (spec.rho - region_mass) / (1.0 - region_mass));
    }

    std::vector<std::uint8_t> bits(static_cast<std::size_t>(spec.n_concepts));
    for (int j = 0; j < m; ++j) {
        for (auto& b : bits) b = rng.bernoulli(0.5) ? 1 : 0;
        const int sg = spec.n_subgroups == 2 ? bits[static_cast<std::size_t>(spec.subgroup_concept)] : 0;

        bool uninterp = false;
        if (spec.rho > 0.0) {
            bool in_region = true;
            for (int c : spec.hard_region_concepts) in_region = in_region && bits[static_cast<std::size_t>(c)];
            uninterp = rng.bernoulli(in_region ? p_in : q_out);
        }
        int label;
        if (uninterp) {
            label = static_cast<int>(rng.index(static_cast<std::size_t>(spec.num_classes)));
        } else {
            label = spec.rules[static_cast<std::size_t>(sg)].eval(bits);
        }

        if (spec.spurious.concept_index >= 0) {
            const int target = spurious_target_bit(label, spec.num_classes);
            const bool agree = rng.bernoulli(spur_corr);
            bits[static_cast<std::size_t>(spec.spurious.concept_index)] =
                static_cast<std::uint8_t>(agree ? target : 1 - target);
            ds.metadata(j, 0) = bits[static_cast<std::size_t>(spec.spurious.concept_index)];
        }

        // rule consistency self-check: the spurious resample must not touch rule concepts
        if (!uninterp && spec.rules[static_cast<std::size_t>(sg)].eval(bits) != label)
            throw NumericError("generate: rule self-check failed");

        for (int i = 0; i < spec.embed_dim; ++i) {
            double acc = 0.0;
            for (int c = 0; c < spec.n_concepts; ++c) acc += w(i, c) * bits[static_cast<std::size_t>(c)];
            acc += w(i, spec.n_concepts + sg);
            ds.embeddings(j, i) = acc + rng.normal(0.0, spec.embed_noise);
        }

        for (int c = 0; c < spec.n_concepts; ++c) {
            const std::uint8_t truth = bits[static_cast<std::size_t>(c)];
            ds.gt_concepts(j, c) = truth;
            std::uint8_t obs = truth;
            if (spec.concept_noise > 0.0 && rng.bernoulli(spec.concept_noise)) obs = 1 - obs;
            const double jitter = rng.uniform(0.0, 0.3);
            ds.concepts(j, c) = obs ? 1.0 - jitter : jitter;
        }
        ds.labels[static_cast<std::size_t>(j)] = label;
        ds.subgroup[static_cast<std::size_t>(j)] = sg;
    }
    ds.validate();
    return ds;
}

}  // namespace

GeneratedData generate(const GenSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Matrix w = mixing_matrix(spec);
    Rng rng(derive_seed(seed, 101));
    GeneratedData out;
    out.train = generate_split(spec, w, spec.train_m, spec.spurious.train_corr, rng, "train", seed);
    out.val = generate_split(spec, w, spec.val_m, spec.spurious.train_corr, rng, "val", seed);
    out.test = generate_split(spec, w, spec.test_m, spec.spurious.test_corr, rng, "test", seed);
    return out;
}

double spurious_agreement(const Dataset& ds, int spurious_concept) {
    if (!ds.has_gt_concepts()) throw InputError("spurious_agreement: dataset has no ground-truth concepts");
    if (spurious_concept < 0 || spurious_concept >= ds.n_concepts())
        throw InputError("spurious_agreement: concept index out of range");
    int agree = 0;
    for (int j = 0; j < ds.size(); ++j) {
        const int target = spurious_target_bit(ds.labels[static_cast<std::size_t>(j)], ds.num_classes);
        if (static_cast<int>(ds.gt_concepts(j, spurious_concept)) == target) ++agree;
    }
    return static_cast<double>(agree) / ds.size();
}

namespace {

void write_double(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, int row) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    while (b < e && *b == ' ') ++b;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) throw ParseError("non-numeric cell '" + s + "' at row " + std::to_string(row));
    return v;
}

}  // namespace

void save_csv(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    for (int i = 0; i < ds.embed_dim(); ++i) out << "emb_" << i << ",";
    for (int c = 0; c < ds.n_concepts(); ++c) out << "concept_" << c << ",";
    if (ds.has_gt_concepts())
        for (int c = 0; c < ds.n_concepts(); ++c) out << "gt_concept_" << c << ",";
    if (ds.has_metadata())
        for (int c = 0; c < ds.metadata.cols; ++c) out << "meta_" << c << ",";
    out << "label";
    if (ds.has_subgroup()) out << ",subgroup";
    out << "\n";
    for (int j = 0; j < ds.size(); ++j) {
        for (int i = 0; i < ds.embed_dim(); ++i) {
            write_double(out, ds.embeddings(j, i));
            out << ",";
        }
        for (int c = 0; c < ds.n_concepts(); ++c) {
            write_double(out, ds.concepts(j, c));
            out << ",";
        }
        if (ds.has_gt_concepts())
            for (int c = 0; c < ds.n_concepts(); ++c) {
                write_double(out, ds.gt_concepts(j, c));
                out << ",";
            }
        if (ds.has_metadata())
            for (int c = 0; c < ds.metadata.cols; ++c) {
                write_double(out, ds.metadata(j, c));
                out << ",";
            }
        out << ds.labels[static_cast<std::size_t>(j)];
        if (ds.has_subgroup()) out << "," << ds.subgroup[static_cast<std::size_t>(j)];
        out << "\n";
    }
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file: " + path);
    const auto header = split_line(line);

    std::vector<int> emb_cols, concept_cols, gt_cols, meta_cols;
    int label_col = -1, subgroup_col = -1;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
        const std::string& h = header[static_cast<std::size_t>(i)];
        if (h.rfind("emb_", 0) == 0) emb_cols.push_back(i);
        else if (h.rfind("gt_concept_", 0) == 0) gt_cols.push_back(i);
        else if (h.rfind("concept_", 0) == 0) concept_cols.push_back(i);
        else if (h.rfind("meta_", 0) == 0) meta_cols.push_back(i);
        else if (h == "label") label_col = i;
        else if (h == "subgroup") subgroup_col = i;
        else throw ParseError("unknown column '" + h + "' in " + path);
    }
    if (label_col < 0) throw ParseError("missing required column 'label' in " + path);
    if (emb_cols.empty()) throw ParseError("missing emb_* columns in " + path);
    if (concept_cols.empty()) throw ParseError("missing concept_* columns in " + path);
    if (!gt_cols.empty() && gt_cols.size() != concept_cols.size())
        throw ParseError("gt_concept_* column count != concept_* count in " + path);

    std::vector<std::vector<double>> rows;
    int rownum = 1;
    while (std::getline(in, line)) {
        ++rownum;
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size())
            throw ParseError("ragged row " + std::to_string(rownum) + ": expected " +
                             std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
        std::vector<double> vals;
        vals.reserve(cells.size());
        for (const auto& cell : cells) vals.push_back(parse_double(cell, rownum));
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw ParseError("no data rows in " + path);

    Dataset ds;
    const int m = static_cast<int>(rows.size());
    ds.embeddings = Matrix(m, static_cast<int>(emb_cols.size()));
    ds.concepts = Matrix(m, static_cast<int>(concept_cols.size()));
    if (!gt_cols.empty()) ds.gt_concepts = Matrix(m, static_cast<int>(gt_cols.size()));
    if (!meta_cols.empty()) ds.metadata = Matrix(m, static_cast<int>(meta_cols.size()));
    ds.labels.assign(static_cast<std::size_t>(m), 0);
    if (subgroup_col >= 0) ds.subgroup.assign(static_cast<std::size_t>(m), 0);
    for (int j = 0; j < m; ++j) {
        const auto& vals = rows[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < emb_cols.size(); ++i)
            ds.embeddings(j, static_cast<int>(i)) = vals[static_cast<std::size_t>(emb_cols[i])];
        for (std::size_t i = 0; i < concept_cols.size(); ++i)
            ds.concepts(j, static_cast<int>(i)) = vals[static_cast<std::size_t>(concept_cols[i])];
        for (std::size_t i = 0; i < gt_cols.size(); ++i)
            ds.gt_concepts(j, static_cast<int>(i)) = vals[static_cast<std::size_t>(gt_cols[i])];
        for (std::size_t i = 0; i < meta_cols.size(); ++i)
            ds.metadata(j, static_cast<int>(i)) = vals[static_cast<std::size_t>(meta_cols[i])];
        const double y = vals[static_cast<std::size_t>(label_col)];
        if (y != std::floor(y) || y < 0) throw ParseError("label must be a nonnegative integer at row " + std::to_string(j + 2));
        ds.labels[static_cast<std::size_t>(j)] = static_cast<int>(y);
        if (subgroup_col >= 0) ds.subgroup[static_cast<std::size_t>(j)] = static_cast<int>(vals[static_cast<std::size_t>(subgroup_col)]);
    }
    for (std::size_t i = 0; i < concept_cols.size(); ++i)
        ds.concept_names.push_back(header[static_cast<std::size_t>(concept_cols[i])]);
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    std::string stem = path;
    if (auto pos = stem.find_last_of('/'); pos != std::string::npos) stem = stem.substr(pos + 1);
    if (auto pos = stem.find_last_of('.'); pos != std::string::npos) stem = stem.substr(0, pos);
    ds.name = stem;
    ds.validate();
    return ds;
}

void save_jsonl(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    for (int j = 0; j < ds.size(); ++j) {
        nlohmann::json row;
        row["emb"] = to_vector(ds.embeddings.row(j));
        row["concepts"] = to_vector(ds.concepts.row(j));
        row["label"] = ds.labels[static_cast<std::size_t>(j)];
        if (ds.has_gt_concepts()) row["gt_concepts"] = to_vector(ds.gt_concepts.row(j));
        if (ds.has_subgroup()) row["subgroup"] = ds.subgroup[static_cast<std::size_t>(j)];
        if (ds.has_metadata()) row["meta"] = to_vector(ds.metadata.row(j));
        out << row.dump() << "\n";
    }
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["name"] = ds.name;
    manifest["seed"] = ds.seed;
    manifest["num_classes"] = ds.num_classes;
    manifest["rows"] = ds.size();
    manifest["concept_names"] = ds.concept_names;
    std::ofstream mf(path + ".manifest.json");
    if (!mf) throw InputError("cannot open for writing: " + path + ".manifest.json");
    mf << manifest.dump(2) << "\n";
}

Dataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open: " + path);
    std::vector<nlohmann::json> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(nlohmann::json::parse(line));
    }
    if (rows.empty()) throw ParseError("no rows in " + path);
    Dataset ds;
    const int m = static_cast<int>(rows.size());
    const auto& first = rows.front();
    ds.embeddings = Matrix(m, static_cast<int>(first.at("emb").size()));
    ds.concepts = Matrix(m, static_cast<int>(first.at("concepts").size()));
    if (first.contains("gt_concepts")) ds.gt_concepts = Matrix(m, ds.concepts.cols);
    if (first.contains("meta")) ds.metadata = Matrix(m, static_cast<int>(first.at("meta").size()));
    ds.labels.assign(static_cast<std::size_t>(m), 0);
    if (first.contains("subgroup")) ds.subgroup.assign(static_cast<std::size_t>(m), 0);
    for (int j = 0; j < m; ++j) {
        const auto& row = rows[static_cast<std::size_t>(j)];
        const auto emb = row.at("emb").get<std::vector<double>>();
        const auto con = row.at("concepts").get<std::vector<double>>();
        std::copy(emb.begin(), emb.end(), ds.embeddings.row(j).begin());
        std::copy(con.begin(), con.end(), ds.concepts.row(j).begin());
        ds.labels[static_cast<std::size_t>(j)] = row.at("label").get<int>();
        if (ds.has_gt_concepts()) {
            const auto gt = row.at("gt_concepts").get<std::vector<double>>();
            std::copy(gt.begin(), gt.end(), ds.gt_concepts.row(j).begin());
        }
        if (!ds.subgroup.empty()) ds.subgroup[static_cast<std::size_t>(j)] = row.at("subgroup").get<int>();
        if (ds.has_metadata()) {
            const auto meta = row.at("meta").get<std::vector<double>>();
            std::copy(meta.begin(), meta.end(), ds.metadata.row(j).begin());
        }
    }
    std::ifstream mf(path + ".manifest.json");
    if (mf) {
        nlohmann::json manifest;
        mf >> manifest;
        ds.name = manifest.value("name", "");
        ds.seed = manifest.value("seed", 0ULL);
        ds.num_classes = manifest.value("num_classes", 0);
        if (manifest.contains("concept_names"))
            ds.concept_names = manifest.at("concept_names").get<std::vector<std::string>>();
    }
    if (ds.num_classes == 0) ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    ds.validate();
    return ds;
}

SplitResult split(const Dataset& ds, const std::array<double, 3>& ratios, std::uint64_t seed) {
    ds.validate();
    double total = 0.0;
    for (double r : ratios) {
        if (r <= 0.0) throw InputError("split: ratios must be positive");
        total += r;
    }
    if (total > 1.0 + 1e-12) throw InputError("split: ratios must sum to at most 1");

    // group row indices by label, shuffle each group deterministically
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t j = 0; j < ds.labels.size(); ++j)
        by_class[static_cast<std::size_t>(ds.labels[j])].push_back(j);
    Rng rng(derive_seed(seed, 202));
    std::array<std::vector<std::size_t>, 3> picks;
    for (auto& cls : by_class) {
        if (cls.empty()) continue;
        const auto perm = rng.permutation(cls.size());
        // largest-remainder allocation of this class across the three splits
        std::array<std::size_t, 3> take{};
        std::array<double, 3> frac{};
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double q = ratios[static_cast<std::size_t>(s)] * static_cast<double>(cls.size());
            take[static_cast<std::size_t>(s)] = static_cast<std::size_t>(std::floor(q + 1e-12));
            frac[static_cast<std::size_t>(s)] = q - std::floor(q + 1e-12);
            assigned += take[static_cast<std::size_t>(s)];
        }
        std::size_t want = static_cast<std::size_t>(std::llround(total * static_cast<double>(cls.size())));
        while (assigned < want) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac[static_cast<std::size_t>(s)] > frac[static_cast<std::size_t>(best)] + 1e-12) best = s;
            ++take[static_cast<std::size_t>(best)];
            frac[static_cast<std::size_t>(best)] = -1.0;
            ++assigned;
        }
        std::size_t off = 0;
        for (int s = 0; s < 3; ++s) {
            for (std::size_t i = 0; i < take[static_cast<std::size_t>(s)]; ++i)
                picks[static_cast<std::size_t>(s)].push_back(cls[perm[off + i]]);
            off += take[static_cast<std::size_t>(s)];
        }
    }
    for (int s = 0; s < 3; ++s) {
        if (picks[static_cast<std::size_t>(s)].empty())
            throw InputError("split: split " + std::to_string(s) + " has zero rows");
        std::sort(picks[static_cast<std::size_t>(s)].begin(), picks[static_cast<std::size_t>(s)].end());
    }
    SplitResult out{ds.select(picks[0]), ds.select(picks[1]), ds.select(picks[2])};
    out.train.name = ds.name + "_train";
    out.val.name = ds.name + "_val";
    out.test.name = ds.name + "_test";
    return out;
}

nlohmann::json genspec_to_json(const GenSpec& spec) {
    nlohmann::json j;
    j["num_classes"] = spec.num_classes;
    j["n_concepts"] = spec.n_concepts;
    j["n_subgroups"] = spec.n_subgroups;
    j["embed_dim"] = spec.embed_dim;
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : spec.rules) rules.push_back({{"kind", rule_name(r.kind)}, {"concepts", r.concept_ids}});
    j["rules"] = std::move(rules);
    j["subgroup_concept"] = spec.subgroup_concept;
    j["rho"] = spec.rho;
    j["hard_region_concepts"] = spec.hard_region_concepts;
    j["concept_noise"] = spec.concept_noise;
    j["embed_noise"] = spec.embed_noise;
    j["spurious"] = {{"concept_index", spec.spurious.concept_index},
                     {"train_corr", spec.spurious.train_corr},
                     {"test_corr", spec.spurious.test_corr},
                     {"embed_gain", spec.spurious.embed_gain}};
    j["mixing_seed"] = spec.mixing_seed;
    j["train_m"] = spec.train_m;
    j["val_m"] = spec.val_m;
    j["test_m"] = spec.test_m;
    return j;
}

GenSpec genspec_from_json(const nlohmann::json& j) {
    GenSpec spec = GenSpec::default_spec();
    spec.num_classes = j.value("num_classes", spec.num_classes);
    spec.n_concepts = j.value("n_concepts", spec.n_concepts);
    spec.n_subgroups = j.value("n_subgroups", spec.n_subgroups);
    spec.embed_dim = j.value("embed_dim", spec.embed_dim);
    if (j.contains("rules")) {
        spec.rules.clear();
        for (const auto& rj : j.at("rules")) {
            SubgroupRule r;
            r.kind = rule_from_name(rj.at("kind").get<std::string>());
            r.concept_ids = rj.at("concepts").get<std::vector<int>>();
            spec.rules.push_back(std::move(r));
        }
    }
    spec.subgroup_concept = j.value("subgroup_concept", spec.subgroup_concept);
    spec.rho = j.value("rho", spec.rho);
    if (j.contains("hard_region_concepts"))
        spec.hard_region_concepts = j.at("hard_region_concepts").get<std::vector<int>>();
    spec.concept_noise = j.value("concept_noise", spec.concept_noise);
    spec.embed_noise = j.value("embed_noise", spec.embed_noise);
    if (j.contains("spurious")) {
        const auto& sj = j.at("spurious");
        spec.spurious.concept_index = sj.value("concept_index", -1);
        spec.spurious.train_corr = sj.value("train_corr", 0.5);
        spec.spurious.test_corr = sj.value("test_corr", 0.5);
        spec.spurious.embed_gain = sj.value("embed_gain", 1.0);
    }
    spec.mixing_seed = j.value("mixing_seed", spec.mixing_seed);
    spec.train_m = j.value("train_m", spec.train_m);
    spec.val_m = j.value("val_m", spec.val_m);
    spec.test_m = j.value("test_m", spec.test_m);
    spec.validate();
    return spec;
}

}  // namespace moie::data
