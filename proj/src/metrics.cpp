#include "fdbd/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "fdbd/rng.hpp"

namespace fdbd::metrics {

namespace {

void require_nonempty(const std::vector<double>& id_scores,
                      const std::vector<double>& ood_scores) {
    if (id_scores.empty() || ood_scores.empty())
        throw EmptyInput("both score sets must be nonempty");
}

}  // namespace

double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
    require_nonempty(id_scores, ood_scores);
    const std::size_t n_id = id_scores.size(), n_ood = ood_scores.size();

    std::vector<std::pair<double, bool>> all;  // (score, is_id)
    all.reserve(n_id + n_ood);
    for (double s : id_scores) all.emplace_back(s, true);
    for (double s : ood_scores) all.emplace_back(s, false);
    std::sort(all.begin(), all.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Rank sum with average ranks on ties. Ranks are half-integers, so the
    // arithmetic below is exact and matches the pairwise count bit for bit.
    double rank_sum_id = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t)
            if (all[t].second) rank_sum_id += avg_rank;
        i = j;
    }
    const double u = rank_sum_id - 0.5 * static_cast<double>(n_id) * static_cast<double>(n_id + 1);
    return u / (static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double fpr95(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
    require_nonempty(id_scores, ood_scores);
    const std::size_t n = id_scores.size();
    const std::size_t m = (19 * n + 19) / 20;  // ceil(0.95 n), exact in integers

    std::vector<double> sorted = id_scores;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double tau = sorted[m - 1];

    std::size_t fp = 0;
    for (double s : ood_scores)
        if (s >= tau) ++fp;
    return static_cast<double>(fp) / static_cast<double>(ood_scores.size());
}

Matrix rank_histograms(const geometry::LinearHead& head, const Matrix& features) {
    if (features.cols() != head.features())
        throw DimensionMismatch("feature matrix has " + std::to_string(features.cols()) +
                                " columns, head expects " + std::to_string(head.features()));
    const Index N = features.rows(), C = head.classes();
    Matrix out(N, C - 1);
    std::vector<double> row(static_cast<std::size_t>(C - 1));
    for (Index i = 0; i < N; ++i) {
        const geometry::DistanceProfile profile =
            geometry::boundary_distances(head, features.row(i).transpose());
        std::size_t r = 0;
        for (Index c = 0; c < C; ++c)
            if (c != profile.predicted) row[r++] = profile.dists(c);
        std::sort(row.begin(), row.end());
        for (Index c = 0; c < C - 1; ++c) out(i, c) = row[static_cast<std::size_t>(c)];
    }
    return out;
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalResult>& rows) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "method,auroc,fpr95,n_id,n_ood\n";
    char buf[96];
    for (const EvalResult& r : rows) {
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g,", r.auroc, r.fpr95);
        f << r.method << buf << r.n_id << ',' << r.n_ood << '\n';
    }
    if (!f.good()) throw IoError("write failed: " + path.string());
}

double linear_r2(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) throw EmptyInput("linear fit needs >= 2 points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (syy == 0.0) return 1.0;
    if (sxx == 0.0) throw ValidationError("linear fit axis is constant");
    const double b = sxy / sxx;
    const double ss_res = syy - b * sxy;
    return 1.0 - ss_res / syy;
}

namespace {

double percentile_of_sorted(const std::vector<double>& sorted, double p) {
    const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (rank - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

LatencyReport bench_scaling(scoring::Method method, const std::string& axis,
                            const std::vector<Index>& values, const BenchConfig& cfg) {
    if (values.size() < 2) throw UsageError("bench sweep needs at least 2 axis points");
    if (axis != "C" && axis != "P" && axis != "N")
        throw UsageError("bench axis must be C, P or N");

    LatencyReport report;
    report.method = scoring::method_name(method);
    report.axis = axis;

    volatile double sink = 0.0;
    for (std::size_t pt = 0; pt < values.size(); ++pt) {
        const Index C = axis == "C" ? values[pt] : cfg.classes;
        const Index P = axis == "P" ? values[pt] : cfg.features;
        const Index N = axis == "N" ? values[pt] : cfg.bank;

        Rng rng(substream(cfg.seed, "bench_point_" + std::to_string(pt)));
        Matrix W(C, P);
        for (Index i = 0; i < C; ++i) W.row(i) = rng.normal_vector(P).transpose();
        geometry::LinearHead head(std::move(W), Vector::Zero(C));

        // Hand-built stats: benchmark isolates scoring, not fitting.
        scoring::TrainingStats stats;
        stats.mu_train = rng.normal_vector(P);
        stats.class_means = Matrix(C, P);
        for (Index i = 0; i < C; ++i) stats.class_means.row(i) = rng.normal_vector(P).transpose();
        stats.shared_cov = Matrix::Identity(P, P);
        stats.shared_cov_inv = Matrix::Identity(P, P);
        if (method == scoring::Method::Knn) {
            stats.normalized_bank = Matrix(N, P);
            for (Index i = 0; i < N; ++i) {
                Vector v = rng.normal_vector(P);
                stats.normalized_bank.row(i) = (v / v.norm()).transpose();
            }
        }

        const Index warmup = std::max<Index>(16, cfg.samples / 10);
        const Index total = warmup + cfg.samples;
        Matrix feats(total, P);
        for (Index i = 0; i < total; ++i) feats.row(i) = rng.normal_vector(P).transpose();

        auto score_one = [&](Index i) {
            const auto z = feats.row(i).transpose();
            switch (method) {
                case scoring::Method::Fdbd: return scoring::fdbd_score(head, stats.mu_train, z);
                case scoring::Method::AvgDist: return scoring::avg_dist_score(head, z);
                case scoring::Method::TopK:
                    return scoring::topk_score(head, stats.mu_train, z, std::max<Index>(1, (C - 1) / 2));
                case scoring::Method::Msp: return scoring::msp_score(head, z);
                case scoring::Method::Energy: return scoring::energy_score(head, z);
                case scoring::Method::Mds: return scoring::mds_score(stats, z);
                case scoring::Method::Knn:
                    return scoring::knn_score(stats, z, std::min<Index>(cfg.knn_k, N));
            }
            return 0.0;
        };

        std::vector<double> us;
        us.reserve(static_cast<std::size_t>(cfg.samples));
        for (Index i = 0; i < total; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            sink = sink + score_one(i);
            const auto t1 = std::chrono::steady_clock::now();
            if (i >= warmup)
                us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        }
        std::sort(us.begin(), us.end());

        BenchPoint point;
        point.value = values[pt];
        point.C = C;
        point.P = P;
        point.N = N;
        point.median_us = percentile_of_sorted(us, 50.0);
        point.p95_us = percentile_of_sorted(us, 95.0);
        report.points.push_back(point);
    }
    (void)sink;

    std::vector<double> xs, ys;
    for (const BenchPoint& p : report.points) {
        xs.push_back(static_cast<double>(p.value));
        ys.push_back(p.median_us);
    }
    report.r2 = linear_r2(xs, ys);
    report.growth_factor = report.points.back().median_us / report.points.front().median_us;
    return report;
}

void write_latency_json(const std::filesystem::path& path, const LatencyReport& report) {
    nlohmann::json doc;
    doc["method"] = report.method;
    doc["axis"] = report.axis;
    doc["r2"] = report.r2;
    doc["growth_factor"] = report.growth_factor;
    doc["points"] = nlohmann::json::array();
    for (const BenchPoint& p : report.points)
        doc["points"].push_back({{"value", p.value},
                                 {"C", p.C},
                                 {"P", p.P},
                                 {"N", p.N},
                                 {"median_us", p.median_us},
                                 {"p95_us", p.p95_us}});
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << doc.dump(2) << "\n";
    if (!f.good()) throw IoError("write failed: " + path.string());
}

}  // namespace fdbd::metrics
