#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fdbd/geometry.hpp"
#include "fdbd/metrics.hpp"
#include "fdbd/types.hpp"

namespace fdbd::synthetic {

/// Gaussian mixture whose class means form a simplex ETF: unit norm, pairwise
/// inner product -1/(C-1), zero sum. The cached head (W = mu, b = 0) is the
/// mixture's optimal classifier.
struct EtfMixture {
    Index C;
    Index P;
    Matrix mu;  // C x P, unit rows
    double sigma;
    std::uint64_t rng_seed;
    geometry::LinearHead head;

    EtfMixture(Matrix mu_in, double sigma_in, std::uint64_t seed_in)
        : C(mu_in.rows()),
          P(mu_in.cols()),
          mu(std::move(mu_in)),
          sigma(sigma_in),
          rng_seed(seed_in),
          head(mu, Vector::Zero(C)) {}
};

/// Builds the ETF by embedding sqrt(C/(C-1)) (I - ones/C) into P dimensions
/// with a seeded random orthonormal basis. Requires 2 <= C <= P+1 (BadDims).
EtfMixture build_etf(Index C, Index P, double sigma, std::uint64_t seed);

/// min over j != i of <z, mu_i - mu_j> / ||mu_i - mu_j|| with
/// i = argmax_j <mu_j, z>; delegates to geometry::nearest_boundary.
double nearest_boundary_dist(const EtfMixture& mix, const Eigen::Ref<const Vector>& z);

/// Uniform sample on the radius-r sphere with per-point nearest-boundary
/// distances and dense-region membership (within 2 sigma of some class mean).
struct SphereSample {
    double r = 0.0;
    Matrix points;         // M x P, rows of norm r
    Vector nearest_dists;  // M
    std::vector<char> in_dense_region;
};

SphereSample sample_sphere(const EtfMixture& mix, double r, Index M, std::uint64_t seed);

/// Mean nearest-boundary distance grows with the sphere radius. The paired
/// check scales one sample by r1/r0 and verifies per-point exact scaling;
/// the unpaired check compares independent samples with a z-statistic.
struct Prop1Report {
    double r0 = 0.0, r1 = 0.0;
    double mean_r0 = 0.0, mean_r1 = 0.0;  // unpaired, independent samples
    double z_stat = 0.0;
    double paired_ratio = 0.0;            // mean over scaled sample / mean_r0 sample
    double paired_max_abs_err = 0.0;      // max |d(s z) - s d(z)|
    bool pass = false;
};

Prop1Report verify_prop1(const EtfMixture& mix, double r0, double r1, Index M,
                         std::uint64_t seed);

/// On a sphere with sigma < r < 5 sigma, points inside the dense region sit
/// farther from decision boundaries than points outside. Resamples up to 10
/// rounds of M points until both regions hold >= 100 points; throws
/// InsufficientRegionMass otherwise.
struct Prop2Report {
    double r = 0.0;
    double mean_id_region = 0.0;   // dense region
    double mean_ood_region = 0.0;  // complement
    Index n_dense = 0, n_outside = 0;
    double dense_fraction = 0.0;
    int rounds = 0;
    double z_stat = 0.0;
    bool pass = false;
};

Prop2Report verify_prop2(const EtfMixture& mix, double r, Index M, std::uint64_t seed);

struct DeviationBucket {
    double lo = 0.0, hi = 0.0;  // deviation-level range covered
    Index population = 0;
    double mean_dist = 0.0, var_dist = 0.0;  // of avg_dist scores in the bucket
    bool is_id = false;
};

/// M ID features from the mixture vs M OOD features (radial_shift: ID scaled
/// by 2; isotropic: N(0, (3 sigma)^2 I)), scored with fdbd and avg_dist
/// against head W = mu, b = 0 and the empirical ID mean.
struct SynthExperiment {
    std::string ood_kind;
    metrics::EvalResult fdbd, avg_dist;
    std::vector<DeviationBucket> buckets;  // ID buckets first, then OOD
    Matrix id_features, ood_features;
    Vector mu_train;
    Vector id_fdbd, id_avg, ood_fdbd, ood_avg;
};

SynthExperiment synth_ood_experiment(const EtfMixture& mix, Index M,
                                     const std::string& ood_kind, std::uint64_t seed);

void write_prop1_json(const std::filesystem::path& path, const Prop1Report& report);
void write_prop2_json(const std::filesystem::path& path, const Prop2Report& report);
void write_experiment_json(const std::filesystem::path& path, const SynthExperiment& exp);

/// CSV `bucket_lo,bucket_hi,population,mean_dist,var_dist,is_id`.
void write_buckets_csv(const std::filesystem::path& path,
                       const std::vector<DeviationBucket>& buckets);

/// Per-sample score dump for distribution plots:
/// `set,sample_index,fdbd,avg_dist`.
void write_scores_csv(const std::filesystem::path& path, const SynthExperiment& exp);

}  // namespace fdbd::synthetic
