#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fdbd/errors.hpp"
#include "fdbd/geometry.hpp"
#include "fdbd/types.hpp"

namespace fdbd::scoring {

/// Everything fitted from training features that the scores consume.
/// Immutable after fit_stats.
struct TrainingStats {
    Vector mu_train;           // P, global feature mean
    Matrix class_means;        // |C| x P
    Matrix shared_cov;         // P x P, pooled within-class covariance + ridge
    Matrix shared_cov_inv;     // P x P
    Matrix normalized_bank;    // N x P, unit rows
    double react_threshold = 0.0;
    std::vector<Index> counts; // per-class sample counts

    Index classes() const { return class_means.rows(); }
    Index features() const { return class_means.cols(); }
};

enum class ShapingMode { None, React, AshS, Scale };

struct ShapingConfig {
    ShapingMode mode = ShapingMode::None;
    double percentile = 90.0;  // must lie in (0, 100) for non-None modes
};

/// p-th percentile by linear interpolation between order statistics
/// (inclusive endpoints): p=0 is the min, p=100 the max, p=50 the median.
double percentile(std::vector<double> values, double p);

/// Fits means, pooled covariance (ridge lambda = 1e-6 * trace / P plus
/// inversion residual check), the unit-normalized feature bank, and the
/// ReAct clip threshold (react_percentile over all activation values).
/// Classes are 0..max(labels); each must occur at least once.
TrainingStats fit_stats(const Matrix& train, const std::vector<Index>& labels,
                        double react_percentile);

/// Activation shaping. react clips at stats.react_threshold; ash_s keeps the
/// k = ceil((1 - p/100) * P) largest entries, zeroes the rest, and multiplies
/// the kept ones by exp(s1/s2) (s1 = sum before pruning, s2 = sum kept);
/// scale multiplies all entries by the same factor without pruning. When
/// s2 <= 0 the factor is undefined: z is returned unchanged and *s2_flagged
/// is set. stats may be null for modes other than react.
Vector shape(const Eigen::Ref<const Vector>& z, const ShapingConfig& cfg,
             const TrainingStats* stats = nullptr, bool* s2_flagged = nullptr);

inline Vector shape(const Eigen::Ref<const Vector>& z, const ShapingConfig& cfg,
                    const TrainingStats& stats, bool* s2_flagged = nullptr) {
    return shape(z, cfg, &stats, s2_flagged);
}

/// Mean boundary distance over non-predicted classes divided by
/// ||z - mu_train||. Throws ZeroDeviation when z equals mu_train exactly.
double fdbd_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& mu_train,
                  const Eigen::Ref<const Vector>& z);
inline double fdbd_score(const geometry::LinearHead& head, const TrainingStats& stats,
                         const Eigen::Ref<const Vector>& z) {
    return fdbd_score(head, stats.mu_train, z);
}

/// Mean boundary distance without the deviation regularizer; equals
/// fdbd_score * ||z - mu_train||.
double avg_dist_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& z);

/// Mean of the k smallest boundary distances over deviation; k = |C|-1
/// reproduces fdbd_score bit for bit. Throws BadK unless 1 <= k <= |C|-1.
double topk_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& mu_train,
                  const Eigen::Ref<const Vector>& z, Index k);
inline double topk_score(const geometry::LinearHead& head, const TrainingStats& stats,
                         const Eigen::Ref<const Vector>& z, Index k) {
    return topk_score(head, stats.mu_train, z, k);
}

/// Maximum softmax probability, stabilized against overflow.
double msp_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& z);

/// logsumexp of the logits; higher means more ID, matching the global
/// lower-is-OOD convention.
double energy_score(const geometry::LinearHead& head, const Eigen::Ref<const Vector>& z);

/// max_c -(z - mu_c)^T Sigma^{-1} (z - mu_c) with the shared covariance.
double mds_score(const TrainingStats& stats, const Eigen::Ref<const Vector>& z);

/// Negated k-th smallest Euclidean distance from z/||z|| to the normalized
/// bank; exact exhaustive search. Throws BadK unless 1 <= k <= N.
double knn_score(const TrainingStats& stats, const Eigen::Ref<const Vector>& z, Index k);

enum class Method { Fdbd, AvgDist, TopK, Msp, Energy, Mds, Knn };

std::string method_name(Method m);
Method parse_method(const std::string& name);  // throws UsageError
bool method_needs_stats(Method m);

struct MethodSpec {
    Method kind = Method::Fdbd;
    Index k = 0;  // topk / knn neighbor count
};

/// One score column per requested method; lower means more OOD everywhere.
struct ScoreTable {
    std::vector<std::string> methods;  // column names
    Matrix scores;                     // N x |methods|

    struct Flag {
        Index sample;
        std::string reason;                 // "zero_deviation" or "non_positive_s2"
        std::vector<std::string> methods;   // affected columns
    };
    std::vector<Flag> flagged;
};

/// Shapes each feature (and mu_train, for the fDBD variants), then fills one
/// column per method. Samples hitting ZeroDeviation or NonPositiveS2 are
/// recorded in `flagged` and their affected scores forced to the column
/// minimum over clean samples, so they rank most-OOD. stats may be null when
/// no requested method and no shaping mode needs it (else UsageError).
ScoreTable score_batch(const Matrix& features, const geometry::LinearHead& head,
                       const TrainingStats* stats, const std::vector<MethodSpec>& methods,
                       const ShapingConfig& shaping);

/// CSV: optional "# key=value" comment lines, then
/// `sample_index,<method1>,...`, one row per sample, 9 significant digits.
void write_score_csv(const std::filesystem::path& path, const ScoreTable& table,
                     const std::vector<std::string>& comments = {});
ScoreTable read_score_csv(const std::filesystem::path& path);

/// Stats bundle: a directory of NPY arrays plus stats.json. Writing is
/// deterministic (same stats give byte-identical files); the covariance
/// inverse is recomputed on load and re-checked.
void save_stats(const std::filesystem::path& dir, const TrainingStats& stats);
TrainingStats load_stats(const std::filesystem::path& dir);

}  // namespace fdbd::scoring
