#pragma once

#include <optional>
#include <utility>

#include "fdbd/errors.hpp"
#include "fdbd/types.hpp"

namespace fdbd::geometry {

/// Linear classification head. pair_diff_norms(i, j) = ‖w_i − w_j‖₂ is
/// precomputed so per-sample boundary distances need only a lookup.
struct LinearHead {
    Matrix W;                // |C| x P, rows w_c
    Vector b;                // |C|
    Matrix pair_diff_norms;  // |C| x |C|, zero diagonal

    /// Throws ValidationError if two weight rows coincide (a zero
    /// difference norm would make the boundary between them undefined).
    LinearHead(Matrix weights, Vector bias);

    Index classes() const { return W.rows(); }
    Index features() const { return W.cols(); }
};

/// Per-class distances to the decision boundaries seen from one feature
/// vector. dists has one entry per class; the predicted class's slot is NaN
/// (there is no boundary between a region and itself).
struct DistanceProfile {
    Index predicted = 0;
    Vector dists;

    Index classes() const { return dists.size(); }
};

/// Smallest class index attaining the maximum logit.
Index predict(const LinearHead& head, const Eigen::Ref<const Vector>& z);

/// Closed-form lower bounds |l_{f(x)} − l_c| / ‖w_{f(x)} − w_c‖₂ on the
/// distance from z to each decision region c ≠ f(x).
DistanceProfile boundary_distances(const LinearHead& head, const Eigen::Ref<const Vector>& z);

/// Exact min_{z' in closure(Z_c)} ‖z − z'‖₂ via Dykstra's alternating
/// projections onto the halfspaces {z' : (w_c − w_j)ᵀz' + (b_c − b_j) ≥ 0}.
/// Returns nullopt when region c is empty (no point attains the max logit
/// at c), detected by projecting onto the homogenized cone first.
/// Throws NoConvergence if the sweep cap is hit. Requires c ≠ predict(z).
std::optional<double> exact_distance(const LinearHead& head, const Eigen::Ref<const Vector>& z,
                                     Index c);

/// Argmin and min of the DistanceProfile; ties go to the lowest class index.
std::pair<Index, double> nearest_boundary(const LinearHead& head,
                                          const Eigen::Ref<const Vector>& z);

}  // namespace fdbd::geometry
