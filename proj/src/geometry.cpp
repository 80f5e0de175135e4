#include "fdbd/geometry.hpp"

#include <cmath>
#include <limits>

namespace fdbd::geometry {

namespace {

void check_dims(const LinearHead& head, const Eigen::Ref<const Vector>& z) {
    if (z.size() != head.features())
        throw DimensionMismatch("feature vector has length " + std::to_string(z.size()) +
                                ", head expects " + std::to_string(head.features()));
}

// Dykstra's alternating projections onto {x : A x >= beta} (rows of A are
// unit vectors). Converges to the exact Euclidean projection of the start
// point; per-halfspace correction terms are what distinguishes this from
// plain cyclic projection, which only finds *a* feasible point.
Vector dykstra(const Matrix& A, const Vector& beta, Vector x) {
    constexpr double kTol = 1e-10;
    constexpr int kMaxSweeps = 100000;
    const Index m = A.rows();
    Matrix corrections = Matrix::Zero(m, x.size());
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double step = 0.0;
        for (Index j = 0; j < m; ++j) {
            const Vector y = x + corrections.row(j).transpose();
            const double slack = A.row(j).dot(y) - beta(j);
            Vector next = y;
            if (slack < 0.0) next -= slack * A.row(j).transpose();
            corrections.row(j) = (y - next).transpose();
            step = std::max(step, (next - x).lpNorm<Eigen::Infinity>());
            x = std::move(next);
        }
        if (step < kTol) return x;
    }
    throw NoConvergence("Dykstra projection did not converge within " +
                        std::to_string(kMaxSweeps) + " sweeps");
}

// Region c is empty iff the projection of e_{P+1} onto the homogenized cone
// K = ∩_j {(x, t) : a_jᵀx − β_j t ≥ 0} is zero: a feasible x₀ puts (x₀, 1)
// in K, forcing ⟨e, P_K(e)⟩ = ‖P_K(e)‖² > 0, while an empty region makes
// every cone point have t ≤ 0, i.e. e lies in the polar cone and projects
// to the origin.
bool region_nonempty(const Matrix& A, const Vector& beta) {
    const Index m = A.rows(), p = A.cols();
    Matrix H(m, p + 1);
    H.leftCols(p) = A;
    H.col(p) = -beta;
    H.rowwise().normalize();
    Vector e = Vector::Zero(p + 1);
    e(p) = 1.0;
    const Vector q = dykstra(H, Vector::Zero(m), std::move(e));
    return q(p) > 1e-12;
}

}  // namespace

LinearHead::LinearHead(Matrix weights, Vector bias)
    : W(std::move(weights)), b(std::move(bias)) {
    if (b.size() != W.rows())
        throw DimensionMismatch("bias length " + std::to_string(b.size()) +
                                " does not match " + std::to_string(W.rows()) + " classes");
    const Index C = W.rows();
    pair_diff_norms = Matrix::Zero(C, C);
    for (Index i = 0; i < C; ++i)
        for (Index j = i + 1; j < C; ++j) {
            const double n = (W.row(i) - W.row(j)).norm();
            if (n <= 0.0)
                throw ValidationError("classes " + std::to_string(i) + " and " +
                                      std::to_string(j) + " have identical weight rows");
            pair_diff_norms(i, j) = pair_diff_norms(j, i) = n;
        }
}

Index predict(const LinearHead& head, const Eigen::Ref<const Vector>& z) {
    check_dims(head, z);
    const Vector logits = head.W * z + head.b;
    Index best = 0;
    for (Index c = 1; c < logits.size(); ++c)
        if (logits(c) > logits(best)) best = c;
    return best;
}

DistanceProfile boundary_distances(const LinearHead& head, const Eigen::Ref<const Vector>& z) {
    check_dims(head, z);
    const Vector logits = head.W * z + head.b;
    Index pred = 0;
    for (Index c = 1; c < logits.size(); ++c)
        if (logits(c) > logits(pred)) pred = c;

    DistanceProfile profile;
    profile.predicted = pred;
    profile.dists.resize(head.classes());
    for (Index c = 0; c < head.classes(); ++c) {
        if (c == pred) {
            profile.dists(c) = std::numeric_limits<double>::quiet_NaN();
        } else {
            profile.dists(c) = std::abs(logits(pred) - logits(c)) / head.pair_diff_norms(pred, c);
        }
    }
    return profile;
}

std::optional<double> exact_distance(const LinearHead& head, const Eigen::Ref<const Vector>& z,
                                     Index c) {
    check_dims(head, z);
    if (c < 0 || c >= head.classes())
        throw DimensionMismatch("class index " + std::to_string(c) + " out of range");

    // Halfspaces of region Z_c: (w_c − w_j)ᵀ z' ≥ b_j − b_c for j ≠ c,
    // rows normalized for conditioning.
    const Index C = head.classes(), P = head.features();
    Matrix A(C - 1, P);
    Vector beta(C - 1);
    Index r = 0;
    for (Index j = 0; j < C; ++j) {
        if (j == c) continue;
        const double n = head.pair_diff_norms(c, j);
        A.row(r) = (head.W.row(c) - head.W.row(j)) / n;
        beta(r) = (head.b(j) - head.b(c)) / n;
        ++r;
    }

    if (!region_nonempty(A, beta)) return std::nullopt;
    const Vector proj = dykstra(A, beta, z);
    return (z - proj).norm();
}

std::pair<Index, double> nearest_boundary(const LinearHead& head,
                                          const Eigen::Ref<const Vector>& z) {
    const DistanceProfile profile = boundary_distances(head, z);
    Index best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < profile.classes(); ++c) {
        if (c == profile.predicted) continue;
        if (profile.dists(c) < best_dist) {
            best = c;
            best_dist = profile.dists(c);
        }
    }
    return {best, best_dist};
}

}  // namespace fdbd::geometry
