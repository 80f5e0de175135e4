#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "fdbd/rng.hpp"
#include "fdbd/synthetic.hpp"

using namespace fdbd;
using namespace fdbd::synthetic;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fdbd_syn_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("build_etf satisfies the frame identities on the whole grid") {
    const std::pair<Index, Index> grid[] = {{2, 2}, {3, 4}, {10, 16}, {100, 128}};
    for (const auto& [C, P] : grid) {
        const EtfMixture mix = build_etf(C, P, 0.3, 7);
        REQUIRE(mix.mu.rows() == C);
        REQUIRE(mix.mu.cols() == P);
        const double off_target = -1.0 / static_cast<double>(C - 1);
        for (Index i = 0; i < C; ++i) {
            CHECK(std::abs(mix.mu.row(i).norm() - 1.0) <= 1e-9);
            for (Index j = i + 1; j < C; ++j)
                CHECK(std::abs(mix.mu.row(i).dot(mix.mu.row(j)) - off_target) <= 1e-9);
        }
        CHECK(mix.mu.colwise().sum().lpNorm<Eigen::Infinity>() <= 1e-9);
    }
}

TEST_CASE("build_etf with two classes gives antipodal means") {
    const EtfMixture mix = build_etf(2, 5, 0.1, 3);
    CHECK((mix.mu.row(0) + mix.mu.row(1)).norm() <= 1e-12);
}

TEST_CASE("build_etf input guards") {
    CHECK_THROWS_AS(build_etf(4, 2, 0.3, 0), BadDims);   // needs C <= P+1
    CHECK_THROWS_AS(build_etf(1, 8, 0.3, 0), BadDims);
    CHECK_THROWS_AS(build_etf(3, 4, 0.0, 0), BadDims);
    CHECK_THROWS_AS(build_etf(3, 4, -1.0, 0), BadDims);
}

TEST_CASE("build_etf is deterministic in the seed") {
    const EtfMixture a = build_etf(10, 16, 0.3, 42);
    const EtfMixture b = build_etf(10, 16, 0.3, 42);
    const EtfMixture c = build_etf(10, 16, 0.3, 43);
    CHECK((a.mu - b.mu).norm() == 0.0);
    CHECK((a.mu - c.mu).norm() != 0.0);
}

TEST_CASE("nearest_boundary_dist closed form") {
    const EtfMixture two = build_etf(2, 3, 0.3, 5);
    // Antipodal means: the bisector is the hyperplane through the origin, so a
    // point at radius r along mu_0 is exactly r away.
    for (double r : {0.5, 1.0, 2.0}) {
        const Vector z = r * two.mu.row(0).transpose();
        CHECK(nearest_boundary_dist(two, z) == doctest::Approx(r).epsilon(1e-12));
    }
    // Midpoint of two means lies on their bisector.
    const EtfMixture mix = build_etf(5, 8, 0.3, 5);
    const Vector mid = 0.5 * (mix.mu.row(0) + mix.mu.row(1)).transpose();
    CHECK(nearest_boundary_dist(mix, mid) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("nearest_boundary_dist agrees with the direct formula") {
    const EtfMixture mix = build_etf(6, 9, 0.3, 11);
    Rng rng(substream(11, "nbd_check"));
    for (int t = 0; t < 100; ++t) {
        const Vector z = rng.normal_vector(9);
        // Independent evaluation from the mixture means alone.
        Index pred = 0;
        (mix.mu * z).maxCoeff(&pred);
        double best = std::numeric_limits<double>::infinity();
        for (Index j = 0; j < 6; ++j) {
            if (j == pred) continue;
            const Vector diff = (mix.mu.row(pred) - mix.mu.row(j)).transpose();
            best = std::min(best, diff.dot(z) / diff.norm());
        }
        CHECK(nearest_boundary_dist(mix, z) == doctest::Approx(best).epsilon(1e-12));
        // Positive homogeneity.
        CHECK(nearest_boundary_dist(mix, (3.0 * z).eval()) ==
              doctest::Approx(3.0 * nearest_boundary_dist(mix, z)).epsilon(1e-12));
    }
}

TEST_CASE("sample_sphere lands on the sphere, deterministically") {
    const EtfMixture mix = build_etf(4, 6, 0.3, 2);
    const SphereSample s = sample_sphere(mix, 1.5, 200, 77);
    REQUIRE(s.points.rows() == 200);
    REQUIRE(s.nearest_dists.size() == 200);
    REQUIRE(s.in_dense_region.size() == 200);
    for (Index i = 0; i < 200; ++i) {
        CHECK(std::abs(s.points.row(i).norm() - 1.5) <= 1e-9);
        CHECK(s.nearest_dists(i) ==
              doctest::Approx(nearest_boundary_dist(mix, s.points.row(i).transpose()))
                  .epsilon(1e-12));
        const double min_to_mean =
            (mix.mu.rowwise() - s.points.row(i)).rowwise().norm().minCoeff();
        CHECK(static_cast<bool>(s.in_dense_region[static_cast<std::size_t>(i)]) ==
              (min_to_mean <= 2.0 * mix.sigma));
    }

    const SphereSample again = sample_sphere(mix, 1.5, 200, 77);
    CHECK((s.points - again.points).norm() == 0.0);
    const SphereSample other = sample_sphere(mix, 1.5, 200, 78);
    CHECK((s.points - other.points).norm() != 0.0);
}

TEST_CASE("verify_prop1 detects the radial scaling law") {
    const EtfMixture mix = build_etf(10, 16, 0.3, 1);
    const Prop1Report rep = verify_prop1(mix, 1.0, 2.0, 2000, 101);
    CHECK(rep.pass);
    CHECK(rep.z_stat >= 5.0);
    CHECK(rep.paired_ratio == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(rep.paired_max_abs_err <= 1e-9);
    CHECK(rep.mean_r1 > rep.mean_r0);
}

TEST_CASE("verify_prop1 fails honestly when the radii coincide") {
    const EtfMixture mix = build_etf(3, 4, 0.3, 1);
    const Prop1Report rep = verify_prop1(mix, 1.0, 1.0, 500, 5);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("verify_prop2 separates dense from sparse regions") {
    const EtfMixture mix = build_etf(2, 2, 0.3, 9);
    const Prop2Report rep = verify_prop2(mix, 1.0, 20000, 31);
    CHECK(rep.pass);
    CHECK(rep.z_stat >= 3.0);
    CHECK(rep.mean_id_region > rep.mean_ood_region);
    CHECK(rep.n_dense >= 100);
    CHECK(rep.n_outside >= 100);
    CHECK(rep.dense_fraction > 0.0);
    CHECK(rep.dense_fraction < 1.0);
}

TEST_CASE("verify_prop2 guards the radius window") {
    const EtfMixture mix = build_etf(2, 2, 0.3, 9);
    CHECK_THROWS_AS(verify_prop2(mix, 0.2, 1000, 0), ValidationError);  // r <= sigma
    CHECK_THROWS_AS(verify_prop2(mix, 1.6, 1000, 0), ValidationError);  // r >= 5 sigma
}

TEST_CASE("verify_prop2 reports insufficient mass instead of guessing") {
    // At C=10, P=16 the dense caps cover ~3e-4 of the sphere; 200 points per
    // round cannot reach 100 dense hits within the 10-round budget.
    const EtfMixture mix = build_etf(10, 16, 0.3, 9);
    CHECK_THROWS_AS(verify_prop2(mix, 1.0, 200, 0), InsufficientRegionMass);
}

TEST_CASE("synth_ood_experiment output shape and the regularization gap") {
    const EtfMixture mix = build_etf(10, 16, 0.3, 4);
    const SynthExperiment exp = synth_ood_experiment(mix, 2000, "radial_shift", 12);

    CHECK(exp.ood_kind == "radial_shift");
    CHECK(exp.fdbd.n_id == 2000);
    CHECK(exp.fdbd.n_ood == 2000);
    CHECK(exp.fdbd.auroc >= 0.0);
    CHECK(exp.fdbd.auroc <= 1.0);
    CHECK(exp.avg_dist.auroc >= 0.0);
    CHECK(exp.avg_dist.auroc <= 1.0);
    // Deviation regularization is the whole point of the score.
    CHECK(exp.fdbd.auroc > exp.avg_dist.auroc);

    REQUIRE(exp.id_features.rows() == 2000);
    REQUIRE(exp.ood_features.rows() == 2000);
    CHECK((exp.mu_train - exp.id_features.colwise().mean().transpose()).norm() <= 1e-12);

    // Five quantile buckets per set, populations covering every sample.
    REQUIRE(exp.buckets.size() == 10);
    Index id_pop = 0, ood_pop = 0;
    for (const DeviationBucket& b : exp.buckets) {
        CHECK(b.lo <= b.hi);
        CHECK(b.population > 0);
        (b.is_id ? id_pop : ood_pop) += b.population;
    }
    CHECK(id_pop == 2000);
    CHECK(ood_pop == 2000);
    for (std::size_t i = 0; i < 5; ++i) CHECK(exp.buckets[i].is_id);
    for (std::size_t i = 5; i < 10; ++i) CHECK_FALSE(exp.buckets[i].is_id);
    // Bucket edges ascend within each set.
    for (std::size_t i = 1; i < 5; ++i) CHECK(exp.buckets[i].lo >= exp.buckets[i - 1].lo);
    for (std::size_t i = 6; i < 10; ++i) CHECK(exp.buckets[i].lo >= exp.buckets[i - 1].lo);

    // radial_shift samples fresh features from the ID law scaled by 2, so the
    // mean radius doubles.
    const double id_norm = exp.id_features.rowwise().norm().mean();
    const double ood_norm = exp.ood_features.rowwise().norm().mean();
    CHECK(ood_norm == doctest::Approx(2.0 * id_norm).epsilon(0.05));

    // Same seed reproduces everything bit for bit.
    const SynthExperiment rerun = synth_ood_experiment(mix, 2000, "radial_shift", 12);
    CHECK((exp.id_features - rerun.id_features).norm() == 0.0);
    CHECK(exp.fdbd.auroc == rerun.fdbd.auroc);

    CHECK_THROWS_AS(synth_ood_experiment(mix, 100, "sideways", 0), UsageError);
}

TEST_CASE("isotropic experiment draws fresh OOD features") {
    const EtfMixture mix = build_etf(3, 4, 0.3, 4);
    const SynthExperiment exp = synth_ood_experiment(mix, 500, "isotropic", 8);
    CHECK(exp.ood_kind == "isotropic");
    // Mean near the origin, per-coordinate spread near 3 sigma.
    CHECK(exp.ood_features.colwise().mean().norm() < 0.25);
    const double sd = std::sqrt(
        (exp.ood_features.array() - exp.ood_features.mean()).square().mean());
    CHECK(sd == doctest::Approx(0.9).epsilon(0.15));
}

TEST_CASE("report writers emit parseable files") {
    TempDir dir;
    const EtfMixture mix = build_etf(3, 4, 0.3, 4);

    const Prop1Report p1 = verify_prop1(mix, 1.0, 2.0, 300, 1);
    write_prop1_json(dir.path / "p1.json", p1);
    {
        std::ifstream in(dir.path / "p1.json");
        const auto doc = nlohmann::json::parse(in);
        CHECK(doc.at("r0").get<double>() == 1.0);
        CHECK(doc.at("pass").get<bool>() == p1.pass);
        CHECK(doc.at("paired_ratio").get<double>() == p1.paired_ratio);
    }

    const EtfMixture flat = build_etf(2, 2, 0.3, 4);
    const Prop2Report p2 = verify_prop2(flat, 1.0, 5000, 1);
    write_prop2_json(dir.path / "p2.json", p2);
    {
        std::ifstream in(dir.path / "p2.json");
        const auto doc = nlohmann::json::parse(in);
        CHECK(doc.at("n_dense").get<Index>() == p2.n_dense);
        CHECK(doc.at("rounds").get<int>() == p2.rounds);
    }

    const SynthExperiment exp = synth_ood_experiment(mix, 200, "isotropic", 2);
    write_experiment_json(dir.path / "exp.json", exp);
    write_buckets_csv(dir.path / "buckets.csv", exp.buckets);
    write_scores_csv(dir.path / "scores.csv", exp);
    {
        std::ifstream in(dir.path / "exp.json");
        const auto doc = nlohmann::json::parse(in);
        CHECK(doc.at("ood_kind").get<std::string>() == "isotropic");
        CHECK(doc.at("fdbd").at("auroc").get<double>() == exp.fdbd.auroc);
    }
    {
        std::ifstream in(dir.path / "buckets.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "bucket_lo,bucket_hi,population,mean_dist,var_dist,is_id");
        std::size_t rows = 0;
        for (std::string line; std::getline(in, line);) rows += !line.empty();
        CHECK(rows == exp.buckets.size());
    }
    {
        std::ifstream in(dir.path / "scores.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "set,sample_index,fdbd,avg_dist");
        std::size_t rows = 0;
        for (std::string line; std::getline(in, line);) rows += !line.empty();
        CHECK(rows == 400);
    }
}
