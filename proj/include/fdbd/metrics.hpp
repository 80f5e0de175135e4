#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fdbd/geometry.hpp"
#include "fdbd/scoring.hpp"
#include "fdbd/types.hpp"

namespace fdbd::metrics {

struct EvalResult {
    std::string method;
    double auroc = 0.0;
    double fpr95 = 0.0;
    Index n_id = 0;
    Index n_ood = 0;
};

/// P(id > ood) + 0.5 * P(id = ood), computed by rank sum with average ranks
/// on ties. Agrees bit for bit with the O(n^2) pair count.
double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);

/// Fraction of OOD scores >= tau, where tau is the largest threshold keeping
/// at least 95% of ID scores >= tau (the ceil(0.95 n)-th largest ID score).
/// OOD scores tied with tau count as false positives.
double fpr95(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);

/// N x (|C|-1) matrix: row i is the ascending-sorted DistanceProfile of
/// feature i, so column r holds the r-th-nearest-boundary distances.
Matrix rank_histograms(const geometry::LinearHead& head, const Matrix& features);

/// CSV `method,auroc,fpr95,n_id,n_ood`, one row per result.
void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalResult>& rows);

struct BenchPoint {
    Index value = 0;  // position on the sweep axis
    Index C = 0, P = 0, N = 0;
    double median_us = 0.0;
    double p95_us = 0.0;
};

struct LatencyReport {
    std::string method;
    std::string axis;  // "C", "P" or "N"
    std::vector<BenchPoint> points;
    double r2 = 0.0;             // linear fit of median time vs axis value
    double growth_factor = 0.0;  // median(last point) / median(first point)
};

struct BenchConfig {
    Index classes = 100;
    Index features = 512;
    Index bank = 10000;   // KNN bank rows when N is not the sweep axis
    Index samples = 1000; // timed scoring calls per point, after warmup
    Index knn_k = 50;
    std::uint64_t seed = 0;
};

/// Times per-sample scoring (setup, fit and I/O excluded) of one method over
/// a sweep of |C|, P or the KNN bank size N. Single-threaded by contract.
LatencyReport bench_scaling(scoring::Method method, const std::string& axis,
                            const std::vector<Index>& values, const BenchConfig& cfg);

void write_latency_json(const std::filesystem::path& path, const LatencyReport& report);

/// R-squared of the least-squares line through (x, y); 1.0 for constant y.
double linear_r2(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace fdbd::metrics
