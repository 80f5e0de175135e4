#include "fdbd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fdbd/rng.hpp"
#include "fdbd/scoring.hpp"

namespace fdbd::synthetic {

namespace {

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // sample variance (n-1)
};

MeanVar mean_var(const std::vector<double>& v) {
    MeanVar mv;
    const auto n = static_cast<double>(v.size());
    if (v.empty()) return mv;
    mv.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() < 2) return mv;
    double ss = 0.0;
    for (double x : v) ss += (x - mv.mean) * (x - mv.mean);
    mv.var = ss / (n - 1.0);
    return mv;
}

double welch_z(const MeanVar& a, std::size_t na, const MeanVar& b, std::size_t nb) {
    const double se = std::sqrt(a.var / static_cast<double>(na) + b.var / static_cast<double>(nb));
    if (se == 0.0) return 0.0;
    return (a.mean - b.mean) / se;
}

// Quantile buckets over deviation levels: 5 nearly equal-count chunks of the
// set, each summarizing the avg_dist scores of its members.
void append_buckets(std::vector<DeviationBucket>& out, const Vector& deviations,
                    const Vector& avg_scores, bool is_id) {
    const Index n = deviations.size();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(),
              [&](Index a, Index b) { return deviations(a) < deviations(b); });

    const Index buckets = std::min<Index>(5, n);
    for (Index b = 0; b < buckets; ++b) {
        const Index lo = b * n / buckets;
        const Index hi = (b + 1) * n / buckets;  // exclusive
        if (hi <= lo) continue;
        std::vector<double> scores;
        scores.reserve(static_cast<std::size_t>(hi - lo));
        for (Index t = lo; t < hi; ++t)
            scores.push_back(avg_scores(order[static_cast<std::size_t>(t)]));
        const MeanVar mv = mean_var(scores);
        DeviationBucket bucket;
        bucket.lo = deviations(order[static_cast<std::size_t>(lo)]);
        bucket.hi = deviations(order[static_cast<std::size_t>(hi - 1)]);
        bucket.population = hi - lo;
        bucket.mean_dist = mv.mean;
        bucket.var_dist = mv.var;
        bucket.is_id = is_id;
        out.push_back(bucket);
    }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << doc.dump(2) << "\n";
    if (!f.good()) throw IoError("write failed: " + path.string());
}

}  // namespace

EtfMixture build_etf(Index C, Index P, double sigma, std::uint64_t seed) {
    if (C < 2 || P < 1 || C > P + 1)
        throw BadDims("ETF needs 2 <= C <= P+1; got C=" + std::to_string(C) +
                      ", P=" + std::to_string(P));
    if (!(sigma > 0.0)) throw BadDims("sigma must be positive");

    // Rows of sqrt(C/(C-1)) (I - ones/C) are the ETF in the C-1 dimensional
    // hyperplane orthogonal to the ones vector; express them in an
    // orthonormal basis of that hyperplane, then embed with a seeded random
    // orthonormal P x (C-1) frame.
    const double scale = std::sqrt(static_cast<double>(C) / static_cast<double>(C - 1));
    Matrix M = scale * (Matrix::Identity(C, C) - Matrix::Constant(C, C, 1.0 / static_cast<double>(C)));

    Eigen::HouseholderQR<Matrix> ones_qr(Matrix::Ones(C, 1));
    const Matrix Q = ones_qr.householderQ();            // C x C, col 0 ~ ones
    const Matrix coords = M * Q.rightCols(C - 1);       // C x (C-1)

    Rng rng(substream(seed, "etf_embed"));
    Matrix G(P, C - 1);
    for (Index j = 0; j < C - 1; ++j) G.col(j) = rng.normal_vector(P);
    Eigen::HouseholderQR<Matrix> embed_qr(G);
    const Matrix E = embed_qr.householderQ() * Matrix::Identity(P, C - 1);  // orthonormal cols

    Matrix mu = coords * E.transpose();  // C x P
    mu.rowwise().normalize();
    return EtfMixture(std::move(mu), sigma, seed);
}

double nearest_boundary_dist(const EtfMixture& mix, const Eigen::Ref<const Vector>& z) {
    return geometry::nearest_boundary(mix.head, z).second;
}

SphereSample sample_sphere(const EtfMixture& mix, double r, Index M, std::uint64_t seed) {
    if (!(r > 0.0)) throw ValidationError("sphere radius must be positive");
    if (M < 1) throw ValidationError("need at least one sample");

    Rng rng(substream(seed, "sphere"));
    SphereSample sample;
    sample.r = r;
    sample.points.resize(M, mix.P);
    sample.nearest_dists.resize(M);
    sample.in_dense_region.resize(static_cast<std::size_t>(M));

    const double dense_radius = 2.0 * mix.sigma;
    for (Index i = 0; i < M; ++i) {
        Vector g = rng.normal_vector(mix.P);
        double n = g.norm();
        while (n == 0.0) {  // probability-zero guard
            g = rng.normal_vector(mix.P);
            n = g.norm();
        }
        const Vector z = (r / n) * g;
        sample.points.row(i) = z.transpose();
        sample.nearest_dists(i) = nearest_boundary_dist(mix, z);
        const double min_dist = (mix.mu.rowwise() - z.transpose()).rowwise().norm().minCoeff();
        sample.in_dense_region[static_cast<std::size_t>(i)] = min_dist <= dense_radius;
    }
    return sample;
}

Prop1Report verify_prop1(const EtfMixture& mix, double r0, double r1, Index M,
                         std::uint64_t seed) {
    if (!(r0 > 0.0) || !(r1 > 0.0)) throw ValidationError("radii must be positive");

    const SphereSample s0 = sample_sphere(mix, r0, M, substream(seed, "prop1_r0"));
    const SphereSample s1 = sample_sphere(mix, r1, M, substream(seed, "prop1_r1"));

    Prop1Report report;
    report.r0 = r0;
    report.r1 = r1;

    std::vector<double> d0(s0.nearest_dists.data(), s0.nearest_dists.data() + M);
    std::vector<double> d1(s1.nearest_dists.data(), s1.nearest_dists.data() + M);
    const MeanVar mv0 = mean_var(d0), mv1 = mean_var(d1);
    report.mean_r0 = mv0.mean;
    report.mean_r1 = mv1.mean;
    report.z_stat = welch_z(mv1, d1.size(), mv0, d0.size());

    // Exact mechanism: with zero bias every boundary distance is linear in z,
    // so scaling the r0 sample by r1/r0 scales each distance by exactly that.
    const double s = r1 / r0;
    double paired_sum = 0.0;
    for (Index i = 0; i < M; ++i) {
        const double scaled = nearest_boundary_dist(mix, (s * s0.points.row(i)).transpose());
        paired_sum += scaled;
        report.paired_max_abs_err =
            std::max(report.paired_max_abs_err, std::abs(scaled - s * s0.nearest_dists(i)));
    }
    report.paired_ratio = (paired_sum / static_cast<double>(M)) / report.mean_r0;

    report.pass = r0 < r1 && report.mean_r0 < report.mean_r1 && report.z_stat >= 5.0 &&
                  report.paired_max_abs_err <= 1e-9;
    return report;
}

Prop2Report verify_prop2(const EtfMixture& mix, double r, Index M, std::uint64_t seed) {
    if (!(mix.sigma < r && r < 5.0 * mix.sigma))
        throw ValidationError("prop2 requires sigma < r < 5*sigma; got sigma=" +
                              std::to_string(mix.sigma) + ", r=" + std::to_string(r));
    if (M < 1) throw ValidationError("need at least one sample");

    constexpr Index kMinRegion = 100;
    constexpr int kMaxRounds = 10;
    std::vector<double> dense, outside;
    Prop2Report report;
    report.r = r;

    for (int round = 0; round < kMaxRounds; ++round) {
        const SphereSample s =
            sample_sphere(mix, r, M, substream(seed, "prop2_round_" + std::to_string(round)));
        for (Index i = 0; i < M; ++i) {
            if (s.in_dense_region[static_cast<std::size_t>(i)])
                dense.push_back(s.nearest_dists(i));
            else
                outside.push_back(s.nearest_dists(i));
        }
        report.rounds = round + 1;
        if (static_cast<Index>(dense.size()) >= kMinRegion &&
            static_cast<Index>(outside.size()) >= kMinRegion)
            break;
    }

    const auto total = static_cast<double>(dense.size() + outside.size());
    report.n_dense = static_cast<Index>(dense.size());
    report.n_outside = static_cast<Index>(outside.size());
    report.dense_fraction = static_cast<double>(dense.size()) / total;
    if (report.n_dense < kMinRegion || report.n_outside < kMinRegion)
        throw InsufficientRegionMass(
            "after " + std::to_string(report.rounds) + " rounds of " + std::to_string(M) +
            " samples: " + std::to_string(report.n_dense) + " dense / " +
            std::to_string(report.n_outside) + " outside (dense fraction " +
            std::to_string(report.dense_fraction) + "); need >= 100 in each region");

    const MeanVar mvd = mean_var(dense), mvo = mean_var(outside);
    report.mean_id_region = mvd.mean;
    report.mean_ood_region = mvo.mean;
    report.z_stat = welch_z(mvd, dense.size(), mvo, outside.size());
    report.pass = report.mean_id_region > report.mean_ood_region && report.z_stat >= 3.0;
    return report;
}

SynthExperiment synth_ood_experiment(const EtfMixture& mix, Index M,
                                     const std::string& ood_kind, std::uint64_t seed) {
    if (M < 2) throw ValidationError("need at least two samples per set");
    if (ood_kind != "radial_shift" && ood_kind != "isotropic")
        throw UsageError("ood_kind must be radial_shift or isotropic");

    SynthExperiment exp;
    exp.ood_kind = ood_kind;

    auto sample_mixture = [&](Rng& rng) {
        const Index c = rng.uniform_int(static_cast<int>(mix.C));
        return Vector(mix.mu.row(c).transpose() + mix.sigma * rng.normal_vector(mix.P));
    };

    Rng id_rng(substream(seed, "exp_id"));
    exp.id_features.resize(M, mix.P);
    for (Index i = 0; i < M; ++i) exp.id_features.row(i) = sample_mixture(id_rng).transpose();

    Rng ood_rng(substream(seed, "exp_ood"));
    exp.ood_features.resize(M, mix.P);
    if (ood_kind == "radial_shift") {
        for (Index i = 0; i < M; ++i)
            exp.ood_features.row(i) = 2.0 * sample_mixture(ood_rng).transpose();
    } else {
        for (Index i = 0; i < M; ++i)
            exp.ood_features.row(i) = (3.0 * mix.sigma) * ood_rng.normal_vector(mix.P).transpose();
    }

    exp.mu_train = exp.id_features.colwise().mean().transpose();

    auto score_set = [&](const Matrix& feats, Vector& fdbd_out, Vector& avg_out) {
        fdbd_out.resize(feats.rows());
        avg_out.resize(feats.rows());
        for (Index i = 0; i < feats.rows(); ++i) {
            const auto z = feats.row(i).transpose();
            fdbd_out(i) = scoring::fdbd_score(mix.head, exp.mu_train, z);
            avg_out(i) = scoring::avg_dist_score(mix.head, z);
        }
    };
    score_set(exp.id_features, exp.id_fdbd, exp.id_avg);
    score_set(exp.ood_features, exp.ood_fdbd, exp.ood_avg);

    auto eval = [&](const std::string& name, const Vector& id_s, const Vector& ood_s) {
        metrics::EvalResult r;
        r.method = name;
        std::vector<double> a(id_s.data(), id_s.data() + id_s.size());
        std::vector<double> b(ood_s.data(), ood_s.data() + ood_s.size());
        r.auroc = metrics::auroc(a, b);
        r.fpr95 = metrics::fpr95(a, b);
        r.n_id = id_s.size();
        r.n_ood = ood_s.size();
        return r;
    };
    exp.fdbd = eval("fdbd", exp.id_fdbd, exp.ood_fdbd);
    exp.avg_dist = eval("avg_dist", exp.id_avg, exp.ood_avg);

    const Vector id_dev = (exp.id_features.rowwise() - exp.mu_train.transpose()).rowwise().norm();
    const Vector ood_dev = (exp.ood_features.rowwise() - exp.mu_train.transpose()).rowwise().norm();
    append_buckets(exp.buckets, id_dev, exp.id_avg, true);
    append_buckets(exp.buckets, ood_dev, exp.ood_avg, false);
    return exp;
}

void write_prop1_json(const std::filesystem::path& path, const Prop1Report& report) {
    write_json_file(path, {{"r0", report.r0},
                           {"r1", report.r1},
                           {"mean_r0", report.mean_r0},
                           {"mean_r1", report.mean_r1},
                           {"z_stat", report.z_stat},
                           {"paired_ratio", report.paired_ratio},
                           {"paired_max_abs_err", report.paired_max_abs_err},
                           {"pass", report.pass}});
}

void write_prop2_json(const std::filesystem::path& path, const Prop2Report& report) {
    write_json_file(path, {{"r", report.r},
                           {"mean_id_region", report.mean_id_region},
                           {"mean_ood_region", report.mean_ood_region},
                           {"n_dense", report.n_dense},
                           {"n_outside", report.n_outside},
                           {"dense_fraction", report.dense_fraction},
                           {"rounds", report.rounds},
                           {"z_stat", report.z_stat},
                           {"pass", report.pass}});
}

void write_experiment_json(const std::filesystem::path& path, const SynthExperiment& exp) {
    auto result = [](const metrics::EvalResult& r) {
        return nlohmann::json{{"method", r.method},
                              {"auroc", r.auroc},
                              {"fpr95", r.fpr95},
                              {"n_id", r.n_id},
                              {"n_ood", r.n_ood}};
    };
    write_json_file(path, {{"ood_kind", exp.ood_kind},
                           {"fdbd", result(exp.fdbd)},
                           {"avg_dist", result(exp.avg_dist)}});
}

void write_buckets_csv(const std::filesystem::path& path,
                       const std::vector<DeviationBucket>& buckets) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "bucket_lo,bucket_hi,population,mean_dist,var_dist,is_id\n";
    char buf[128];
    for (const DeviationBucket& b : buckets) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%lld,%.9g,%.9g,%d\n", b.lo, b.hi,
                      static_cast<long long>(b.population), b.mean_dist, b.var_dist,
                      b.is_id ? 1 : 0);
        f << buf;
    }
    if (!f.good()) throw IoError("write failed: " + path.string());
}

void write_scores_csv(const std::filesystem::path& path, const SynthExperiment& exp) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "set,sample_index,fdbd,avg_dist\n";
    char buf[96];
    auto dump = [&](const char* set, const Vector& fd, const Vector& av) {
        for (Index i = 0; i < fd.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s,%lld,%.9g,%.9g\n", set,
                          static_cast<long long>(i), fd(i), av(i));
            f << buf;
        }
    };
    dump("id", exp.id_fdbd, exp.id_avg);
    dump("ood", exp.ood_fdbd, exp.ood_avg);
    if (!f.good()) throw IoError("write failed: " + path.string());
}

}  // namespace fdbd::synthetic
