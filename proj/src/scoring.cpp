#include "fdbd/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fdbd/tensorio.hpp"

namespace fdbd::scoring {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Mean of the k smallest non-predicted distances. fdbd, topk and avg_dist
// all route through here so that topk with k=|C|-1 reproduces fdbd (after
// the shared division by deviation) bit for bit.
double mean_of_k_smallest(const geometry::DistanceProfile& profile, Index k) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(profile.classes() - 1));
    for (Index c = 0; c < profile.classes(); ++c)
        if (c != profile.predicted) d.push_back(profile.dists(c));
    std::sort(d.begin(), d.end());
    double sum = 0.0;
    for (Index i = 0; i < k; ++i) sum += d[static_cast<std::size_t>(i)];
    return sum / static_cast<double>(k);
}

// Indices of the k largest entries, ties broken by value descending then
// index ascending.
std::vector<Index> top_k_indices(const Eigen::Ref<const Vector>& z, Index k) {
    std::vector<Index> idx(static_cast<std::size_t>(z.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        if (z(a) != z(b)) return z(a) > z(b);
        return a < b;
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

void format_sig9(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out += buf;
}

}  // namespace

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw EmptyInput("percentile of an empty set");
    if (p < 0.0 || p > 100.0) throw ValidationError("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

TrainingStats fit_stats(const Matrix& train, const std::vector<Index>& labels,
                        double react_percentile) {
    const Index N = train.rows(), P = train.cols();
    if (static_cast<Index>(labels.size()) != N)
        throw DimensionMismatch("labels length " + std::to_string(labels.size()) +
                                " does not match " + std::to_string(N) + " training rows");
    if (N == 0) throw EmptyInput("cannot fit stats on an empty training set");

    Index C = 0;
    for (Index lab : labels) {
        if (lab < 0) throw ValidationError("negative class label");
        C = std::max(C, lab + 1);
    }

    TrainingStats stats;
    stats.counts.assign(static_cast<std::size_t>(C), 0);
    for (Index lab : labels) ++stats.counts[static_cast<std::size_t>(lab)];
    for (Index c = 0; c < C; ++c)
        if (stats.counts[static_cast<std::size_t>(c)] == 0)
            throw MissingClass("class " + std::to_string(c) + " has no training samples");

    stats.mu_train = train.colwise().mean().transpose();
    stats.class_means = Matrix::Zero(C, P);
    for (Index i = 0; i < N; ++i) stats.class_means.row(labels[static_cast<std::size_t>(i)]) += train.row(i);
    for (Index c = 0; c < C; ++c)
        stats.class_means.row(c) /= static_cast<double>(stats.counts[static_cast<std::size_t>(c)]);

    // Pooled within-class covariance; the ridge keeps the inverse finite
    // even when some class is degenerate.
    Matrix cov = Matrix::Zero(P, P);
    for (Index i = 0; i < N; ++i) {
        const Vector centered = train.row(i).transpose() - stats.class_means.row(labels[static_cast<std::size_t>(i)]).transpose();
        cov.noalias() += centered * centered.transpose();
    }
    cov /= static_cast<double>(N);
    const double lambda = 1e-6 * cov.trace() / static_cast<double>(P);
    cov.diagonal().array() += lambda;
    stats.shared_cov = cov;
    stats.shared_cov_inv = cov.ldlt().solve(Matrix::Identity(P, P));
    const double residual =
        (cov * stats.shared_cov_inv - Matrix::Identity(P, P)).cwiseAbs().maxCoeff();
    if (!(residual <= 1e-6))
        throw DegenerateCovariance("covariance inversion residual " + std::to_string(residual) +
                                   " exceeds 1e-6 after ridge");

    stats.normalized_bank = train;
    for (Index i = 0; i < N; ++i) {
        const double n = stats.normalized_bank.row(i).norm();
        if (n <= 0.0)
            throw ValidationError("training row " + std::to_string(i) +
                                  " has zero norm; cannot normalize");
        stats.normalized_bank.row(i) /= n;
    }

    std::vector<double> flat(train.data(), train.data() + train.size());
    stats.react_threshold = percentile(std::move(flat), react_percentile);
    return stats;
}

Vector shape(const Eigen::Ref<const Vector>& z, const ShapingConfig& cfg,
             const TrainingStats* stats, bool* s2_flagged) {
    if (s2_flagged) *s2_flagged = false;
    if (cfg.mode == ShapingMode::None) return z;
    if (!(cfg.percentile > 0.0 && cfg.percentile < 100.0))
        throw ValidationError("shaping percentile must lie in (0, 100)");

    if (cfg.mode == ShapingMode::React) {
        if (!stats) throw UsageError("react shaping requires fitted training stats");
        return z.cwiseMin(stats->react_threshold);
    }

    // ash_s / scale. k = ceil((1 - p/100) * P), computed as P - floor(p*P/100)
    // to dodge the roundoff of the direct form.
    const Index P = z.size();
    const Index k = P - static_cast<Index>(std::floor(cfg.percentile * static_cast<double>(P) / 100.0));
    const std::vector<Index> kept = top_k_indices(z, std::max<Index>(k, 1));
    const double s1 = z.sum();
    double s2 = 0.0;
    for (Index i : kept) s2 += z(i);
    if (s2 <= 0.0) {
        if (s2_flagged) *s2_flagged = true;
        return z;
    }
    const double factor = std::exp(s1 / s2);
    if (cfg.mode == ShapingMode::Scale) return z * factor;
    Vector out = Vector::Zero(P);
    for (Index i : kept) out(i) = z(i) * factor;
    return out;
}

double fdbd_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& mu_train,
                  const Eigen::Ref<const Vector>& z) {
    const geometry::DistanceProfile profile = geometry::boundary_distances(head, z);
    const double dev = (z - mu_train).norm();
    if (dev == 0.0) throw ZeroDeviation("feature equals the training mean; score undefined");
    return mean_of_k_smallest(profile, head.classes() - 1) / dev;
}

double avg_dist_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& z) {
    const geometry::DistanceProfile profile = geometry::boundary_distances(head, z);
    return mean_of_k_smallest(profile, head.classes() - 1);
}

double topk_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& mu_train,
                  const Eigen::Ref<const Vector>& z, Index k) {
    if (k < 1 || k > head.classes() - 1)
        throw BadK("topk k=" + std::to_string(k) + " outside [1, " +
                   std::to_string(head.classes() - 1) + "]");
    const geometry::DistanceProfile profile = geometry::boundary_distances(head, z);
    const double dev = (z - mu_train).norm();
    if (dev == 0.0) throw ZeroDeviation("feature equals the training mean; score undefined");
    return mean_of_k_smallest(profile, k) / dev;
}

double msp_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& z) {
    const Vector logits = head.W * z + head.b;
    const double m = logits.maxCoeff();
    return 1.0 / (logits.array() - m).exp().sum();
}

double energy_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& z) {
    const Vector logits = head.W * z + head.b;
    const double m = logits.maxCoeff();
    return m + std::log((logits.array() - m).exp().sum());
}

double mds_score(const TrainingStats& stats, const Eigen::Ref<const Vector>& z) {
    double best = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < stats.classes(); ++c) {
        const Vector d = z - stats.class_means.row(c).transpose();
        best = std::max(best, -d.dot(stats.shared_cov_inv * d));
    }
    return best;
}

double knn_score(const TrainingStats& stats, const Eigen::Ref<const Vector>& z, Index k) {
    const Index N = stats.normalized_bank.rows();
    if (k < 1 || k > N)
        throw BadK("knn k=" + std::to_string(k) + " outside [1, " + std::to_string(N) + "]");
    const double zn = z.norm();
    const Vector u = zn > 0.0 ? Vector(z / zn) : Vector(z);
    std::vector<double> dists(static_cast<std::size_t>(N));
    for (Index i = 0; i < N; ++i)
        dists[static_cast<std::size_t>(i)] = (stats.normalized_bank.row(i).transpose() - u).norm();
    std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
    return -dists[static_cast<std::size_t>(k - 1)];
}

std::string method_name(Method m) {
    switch (m) {
        case Method::Fdbd: return "fdbd";
        case Method::AvgDist: return "avg_dist";
        case Method::TopK: return "topk";
        case Method::Msp: return "msp";
        case Method::Energy: return "energy";
        case Method::Mds: return "mds";
        case Method::Knn: return "knn";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    for (Method m : {Method::Fdbd, Method::AvgDist, Method::TopK, Method::Msp, Method::Energy,
                     Method::Mds, Method::Knn})
        if (method_name(m) == name) return m;
    throw UsageError("unknown method '" + name +
                     "' (expected fdbd, avg_dist, topk, msp, energy, mds or knn)");
}

bool method_needs_stats(Method m) {
    switch (m) {
        case Method::Fdbd:
        case Method::TopK:
        case Method::Mds:
        case Method::Knn: return true;
        default: return false;
    }
}

ScoreTable score_batch(const Matrix& features, const geometry::LinearHead& head,
                       const TrainingStats* stats, const std::vector<MethodSpec>& methods,
                       const ShapingConfig& shaping) {
    if (features.cols() != head.features() && features.rows() > 0)
        throw DimensionMismatch("feature matrix has " + std::to_string(features.cols()) +
                                " columns, head expects " + std::to_string(head.features()));
    for (const MethodSpec& spec : methods)
        if (method_needs_stats(spec.kind) && !stats)
            throw UsageError("method '" + method_name(spec.kind) +
                             "' requires fitted training stats");
    if (shaping.mode == ShapingMode::React && !stats)
        throw UsageError("react shaping requires fitted training stats");
    if (stats && stats->features() != head.features())
        throw DimensionMismatch("stats were fitted on " + std::to_string(stats->features()) +
                                " features, head expects " + std::to_string(head.features()));

    const Index N = features.rows();
    const Index M = static_cast<Index>(methods.size());
    ScoreTable table;
    table.scores.resize(N, M);
    for (const MethodSpec& spec : methods) table.methods.push_back(method_name(spec.kind));

    bool wants_deviation = false;
    for (const MethodSpec& spec : methods)
        wants_deviation |= spec.kind == Method::Fdbd || spec.kind == Method::TopK;

    // Shaping acts on features and, for the deviation-regularized scores, on
    // mu_train; head geometry and the fitted banks stay untouched.
    Vector mu_shaped;
    if (wants_deviation) {
        bool mu_flag = false;
        mu_shaped = shape(stats->mu_train, shaping, stats, &mu_flag);
        if (mu_flag)
            table.flagged.push_back({-1, "non_positive_s2(mu_train)", table.methods});
    }

    for (Index i = 0; i < N; ++i) {
        bool s2_flag = false;
        const Vector z = shape(features.row(i).transpose(), shaping, stats, &s2_flag);

        double dev = 0.0;
        bool zero_dev = false;
        if (wants_deviation) {
            dev = (z - mu_shaped).norm();
            zero_dev = dev == 0.0;
        }

        std::vector<std::string> zero_dev_methods;
        for (Index j = 0; j < M; ++j) {
            const MethodSpec& spec = methods[static_cast<std::size_t>(j)];
            double v = kNaN;
            switch (spec.kind) {
                case Method::Fdbd:
                case Method::TopK: {
                    if (zero_dev) {
                        zero_dev_methods.push_back(table.methods[static_cast<std::size_t>(j)]);
                        break;
                    }
                    const Index k = spec.kind == Method::Fdbd ? head.classes() - 1 : spec.k;
                    v = topk_score(head, mu_shaped, z, k);
                    break;
                }
                case Method::AvgDist: v = avg_dist_score(head, z); break;
                case Method::Msp: v = msp_score(head, z); break;
                case Method::Energy: v = energy_score(head, z); break;
                case Method::Mds: v = mds_score(*stats, z); break;
                case Method::Knn: v = knn_score(*stats, z, spec.k); break;
            }
            table.scores(i, j) = v;
        }

        if (s2_flag) {
            table.flagged.push_back({i, "non_positive_s2", table.methods});
            table.scores.row(i).setConstant(kNaN);
        } else if (!zero_dev_methods.empty()) {
            table.flagged.push_back({i, "zero_deviation", zero_dev_methods});
        }
    }

    // Flagged cells (NaN) drop to the column minimum over clean samples so
    // they rank as most-OOD; a column with no clean sample falls back to 0.
    for (Index j = 0; j < M; ++j) {
        double lo = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < N; ++i)
            if (!std::isnan(table.scores(i, j))) lo = std::min(lo, table.scores(i, j));
        if (!std::isfinite(lo)) lo = 0.0;
        for (Index i = 0; i < N; ++i)
            if (std::isnan(table.scores(i, j))) table.scores(i, j) = lo;
    }
    return table;
}

void write_score_csv(const std::filesystem::path& path, const ScoreTable& table,
                     const std::vector<std::string>& comments) {
    std::string out;
    for (const std::string& c : comments) out += "# " + c + "\n";
    out += "sample_index";
    for (const std::string& m : table.methods) out += "," + m;
    out += "\n";
    for (Index i = 0; i < table.scores.rows(); ++i) {
        out += std::to_string(i);
        for (Index j = 0; j < table.scores.cols(); ++j) {
            out += ',';
            format_sig9(out, table.scores(i, j));
        }
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << out;
    if (!f.good()) throw IoError("write failed: " + path.string());
}

ScoreTable read_score_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    std::string line;
    while (std::getline(f, line) && (line.empty() || line[0] == '#')) {
    }
    if (line.empty()) throw ValidationError("score CSV has no header: " + path.string());

    ScoreTable table;
    {
        std::stringstream ss(line);
        std::string tok;
        if (!std::getline(ss, tok, ',') || tok != "sample_index")
            throw ValidationError("score CSV must start with sample_index: " + path.string());
        while (std::getline(ss, tok, ',')) table.methods.push_back(tok);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');  // sample_index, positional
        std::vector<double> row;
        while (std::getline(ss, tok, ',')) {
            try {
                row.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ValidationError("bad score value '" + tok + "' in " + path.string());
            }
        }
        if (row.size() != table.methods.size())
            throw ValidationError("row width mismatch in " + path.string());
        rows.push_back(std::move(row));
    }
    table.scores.resize(static_cast<Index>(rows.size()), static_cast<Index>(table.methods.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            table.scores(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return table;
}

void save_stats(const std::filesystem::path& dir, const TrainingStats& stats) {
    std::filesystem::create_directories(dir);
    using tensorio::ArrayFile;
    tensorio::write_array(dir / "mu_train.npy", ArrayFile::from_vector(stats.mu_train));
    tensorio::write_array(dir / "class_means.npy", ArrayFile::from_matrix(stats.class_means));
    tensorio::write_array(dir / "shared_cov.npy", ArrayFile::from_matrix(stats.shared_cov));
    tensorio::write_array(dir / "normalized_bank.npy",
                          ArrayFile::from_matrix(stats.normalized_bank));
    nlohmann::json index;
    index["react_threshold"] = stats.react_threshold;
    index["counts"] = stats.counts;
    index["arrays"] = {{"mu_train", "mu_train.npy"},
                       {"class_means", "class_means.npy"},
                       {"shared_cov", "shared_cov.npy"},
                       {"normalized_bank", "normalized_bank.npy"}};
    std::ofstream f(dir / "stats.json", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + (dir / "stats.json").string() + " for writing");
    f << index.dump(2) << "\n";
    if (!f.good()) throw IoError("write failed: " + (dir / "stats.json").string());
}

TrainingStats load_stats(const std::filesystem::path& dir) {
    nlohmann::json index;
    {
        std::ifstream f(dir / "stats.json");
        if (!f) throw IoError("cannot open " + (dir / "stats.json").string());
        try {
            index = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("stats index parse error: " + std::string(e.what()));
        }
    }
    TrainingStats stats;
    try {
        stats.react_threshold = index.at("react_threshold").get<double>();
        stats.counts = index.at("counts").get<std::vector<Index>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("stats index malformed: " + std::string(e.what()));
    }
    stats.mu_train = tensorio::read_array(dir / "mu_train.npy").to_vector();
    stats.class_means = tensorio::read_array(dir / "class_means.npy").to_matrix();
    stats.shared_cov = tensorio::read_array(dir / "shared_cov.npy").to_matrix();
    stats.normalized_bank = tensorio::read_array(dir / "normalized_bank.npy").to_matrix();

    const Index P = stats.class_means.cols();
    if (stats.mu_train.size() != P || stats.shared_cov.rows() != P ||
        stats.shared_cov.cols() != P || stats.normalized_bank.cols() != P ||
        static_cast<Index>(stats.counts.size()) != stats.class_means.rows())
        throw DimensionMismatch("stats bundle arrays disagree on dimensions");

    stats.shared_cov_inv = stats.shared_cov.ldlt().solve(Matrix::Identity(P, P));
    const double residual =
        (stats.shared_cov * stats.shared_cov_inv - Matrix::Identity(P, P)).cwiseAbs().maxCoeff();
    if (!(residual <= 1e-6))
        throw DegenerateCovariance("covariance inversion residual " + std::to_string(residual) +
                                   " exceeds 1e-6 on load");
    return stats;
}

}  // namespace fdbd::scoring
