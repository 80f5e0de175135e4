#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fdbd/cli.hpp"
#include "fdbd/rng.hpp"
#include "fdbd/tensorio.hpp"

using namespace fdbd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fdbd_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    REQUIRE(out.good());
}

// C=3, P=4 head plus train/ID/OOD feature dumps and a manifest tying them
// together. Everything deterministic.
struct ToyData {
    TempDir dir;
    fs::path manifest_path;
    Matrix W;
    Vector b;
    Matrix train, id, ood_near, ood_far;
    std::vector<Index> labels;

    ToyData() {
        Rng rng(substream(1234, "toy_manifest"));
        W = Matrix(3, 4);
        for (Index i = 0; i < 3; ++i) W.row(i) = rng.normal_vector(4).transpose();
        b = rng.normal_vector(3);

        auto features = [&](Index n) {
            Matrix m(n, 4);
            for (Index i = 0; i < n; ++i)
                m.row(i) = (rng.normal_vector(4) + Vector::Constant(4, 0.5)).transpose();
            return m;
        };
        train = features(30);
        id = features(10);
        ood_near = features(8);
        ood_far = 3.0 * features(8);
        Vector label_values(30);
        for (Index i = 0; i < 30; ++i) {
            labels.push_back(i % 3);
            label_values(i) = static_cast<double>(i % 3);
        }

        tensorio::write_array(dir.path / "W.npy", tensorio::ArrayFile::from_matrix(W));
        tensorio::write_array(dir.path / "b.npy", tensorio::ArrayFile::from_vector(b));
        tensorio::write_array(dir.path / "train.npy", tensorio::ArrayFile::from_matrix(train));
        tensorio::write_array(dir.path / "labels.npy",
                              tensorio::ArrayFile::from_vector(label_values));
        tensorio::write_array(dir.path / "id.npy", tensorio::ArrayFile::from_matrix(id));
        tensorio::write_array(dir.path / "near.npy",
                              tensorio::ArrayFile::from_matrix(ood_near));
        tensorio::write_array(dir.path / "far.npy", tensorio::ArrayFile::from_matrix(ood_far));

        manifest_path = dir.path / "manifest.json";
        spit(manifest_path, R"({
  "head_weights": "W.npy",
  "head_bias": "b.npy",
  "train_features": "train.npy",
  "train_labels": "labels.npy",
  "id_features": "id.npy",
  "ood_features": {"near": "near.npy", "far": "far.npy"}
})");
    }
};

}  // namespace

TEST_CASE("parse_shaping") {
    CHECK(cli::parse_shaping("none").mode == scoring::ShapingMode::None);
    CHECK(cli::parse_shaping("react").mode == scoring::ShapingMode::React);
    CHECK(cli::parse_shaping("react").percentile == 80.0);
    CHECK(cli::parse_shaping("ash_s").percentile == 90.0);
    CHECK(cli::parse_shaping("scale").percentile == 90.0);
    CHECK(cli::parse_shaping("ash_s:65").percentile == 65.0);
    CHECK(cli::parse_shaping("react:99.5").percentile == 99.5);
    CHECK_THROWS_AS(cli::parse_shaping("none:5"), UsageError);
    CHECK_THROWS_AS(cli::parse_shaping("melt"), UsageError);
    CHECK_THROWS_AS(cli::parse_shaping("react:abc"), UsageError);
    CHECK_THROWS_AS(cli::parse_shaping("react:0"), UsageError);
    CHECK_THROWS_AS(cli::parse_shaping("react:100"), UsageError);
}

TEST_CASE("split_list") {
    CHECK(cli::split_list("a,b,c") == std::vector<std::string>{"a", "b", "c"});
    CHECK(cli::split_list("a,,c,") == std::vector<std::string>{"a", "c"});
    CHECK(cli::split_list("") == std::vector<std::string>{});
}

TEST_CASE("help and usage exit codes") {
    CHECK(cli::run({"fdbd", "--help"}) == 0);
    CHECK(cli::run({"fdbd"}) == 1);                    // subcommand required
    CHECK(cli::run({"fdbd", "nonsense"}) == 1);
    CHECK(cli::run({"fdbd", "fit"}) == 1);             // missing --manifest
}

TEST_CASE("fit writes a reproducible stats bundle") {
    ToyData toy;
    const fs::path s1 = toy.dir.path / "s1";
    const fs::path s2 = toy.dir.path / "s2";

    CHECK(cli::run({"fdbd", "fit", "--manifest", toy.manifest_path.string(), "--out",
                    s1.string()}) == 0);
    for (const char* name : {"stats.json", "mu_train.npy", "class_means.npy",
                             "shared_cov.npy", "normalized_bank.npy"})
        CHECK(fs::exists(s1 / name));

    CHECK(cli::run({"fdbd", "fit", "--manifest", toy.manifest_path.string(), "--out",
                    s2.string()}) == 0);
    for (const char* name : {"stats.json", "mu_train.npy", "class_means.npy",
                             "shared_cov.npy", "normalized_bank.npy"})
        CHECK(slurp(s1 / name) == slurp(s2 / name));

    const scoring::TrainingStats stats = scoring::load_stats(s1);
    const scoring::TrainingStats direct = scoring::fit_stats(toy.train, toy.labels, 80.0);
    CHECK((stats.mu_train - direct.mu_train).norm() == 0.0);
}

TEST_CASE("fit without labels fails with a data error") {
    ToyData toy;
    spit(toy.dir.path / "nolabels.json", R"({
  "head_weights": "W.npy",
  "head_bias": "b.npy",
  "train_features": "train.npy"
})");
    CHECK(cli::run({"fdbd", "fit", "--manifest", (toy.dir.path / "nolabels.json").string(),
                    "--out", (toy.dir.path / "s").string()}) == 2);
}

TEST_CASE("score emits per-set CSVs matching pointwise scoring") {
    ToyData toy;
    const fs::path stats_dir = toy.dir.path / "stats";
    REQUIRE(cli::run({"fdbd", "fit", "--manifest", toy.manifest_path.string(), "--out",
                      stats_dir.string()}) == 0);

    const fs::path out = toy.dir.path / "scores";
    CHECK(cli::run({"fdbd", "score", "--manifest", toy.manifest_path.string(), "--stats",
                    stats_dir.string(), "--methods", "fdbd,msp", "--out", out.string()}) == 0);

    for (const char* name : {"scores_id.csv", "scores_ood_near.csv", "scores_ood_far.csv"})
        CHECK(fs::exists(out / name));
    CHECK(fs::exists(out / "scores_id.flags.json"));

    const geometry::LinearHead head(toy.W, toy.b);
    const scoring::TrainingStats stats = scoring::load_stats(stats_dir);
    const scoring::ScoreTable table = scoring::read_score_csv(out / "scores_id.csv");
    REQUIRE(table.methods == std::vector<std::string>{"fdbd", "msp"});
    REQUIRE(table.scores.rows() == 10);
    for (Index i = 0; i < 10; ++i) {
        const Vector z = toy.id.row(i).transpose();
        CHECK(table.scores(i, 0) ==
              doctest::Approx(scoring::fdbd_score(head, stats, z)).epsilon(1e-8));
        CHECK(table.scores(i, 1) ==
              doctest::Approx(scoring::msp_score(head, z)).epsilon(1e-8));
    }
}

TEST_CASE("score records the shaping spec verbatim") {
    ToyData toy;
    const fs::path stats_dir = toy.dir.path / "stats";
    REQUIRE(cli::run({"fdbd", "fit", "--manifest", toy.manifest_path.string(), "--out",
                      stats_dir.string()}) == 0);
    const fs::path out = toy.dir.path / "shaped";
    CHECK(cli::run({"fdbd", "score", "--manifest", toy.manifest_path.string(), "--stats",
                    stats_dir.string(), "--methods", "fdbd", "--shaping", "ash_s:90",
                    "--out", out.string()}) == 0);
    const std::string text = slurp(out / "scores_id.csv");
    CHECK(text.find("# shaping=ash_s:90\n") != std::string::npos);
    CHECK(text.find("# methods=fdbd\n") != std::string::npos);
}

TEST_CASE("score without required stats is a usage error") {
    ToyData toy;
    CHECK(cli::run({"fdbd", "score", "--manifest", toy.manifest_path.string(), "--methods",
                    "knn", "--out", (toy.dir.path / "x").string()}) == 1);
    CHECK(cli::run({"fdbd", "score", "--manifest", toy.manifest_path.string(), "--methods",
                    "bogus", "--out", (toy.dir.path / "x").string()}) == 1);
    // msp needs only the head.
    CHECK(cli::run({"fdbd", "score", "--manifest", toy.manifest_path.string(), "--methods",
                    "msp", "--out", (toy.dir.path / "x").string()}) == 0);
}

TEST_CASE("eval computes per-set rows and their average") {
    TempDir dir;
    spit(dir.path / "scores_id.csv", "sample_index,fdbd\n0,10\n1,11\n");
    spit(dir.path / "scores_ood_near.csv", "sample_index,fdbd\n0,1\n1,2\n");
    spit(dir.path / "scores_ood_far.csv", "sample_index,fdbd\n0,10.5\n1,5\n");

    CHECK(cli::run({"fdbd", "eval", "--id", (dir.path / "scores_id.csv").string(), "--ood",
                    (dir.path / "scores_ood_near.csv").string(), "--ood",
                    (dir.path / "scores_ood_far.csv").string(), "--out",
                    dir.path.string()}) == 0);

    std::ifstream in(dir.path / "eval.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "method,auroc,fpr95,n_id,n_ood");
    std::getline(in, line);
    CHECK(line == "fdbd:near,1,0,2,2");
    std::getline(in, line);
    CHECK(line == "fdbd:far,0.75,0.5,2,2");
    std::getline(in, line);
    CHECK(line == "fdbd:Average,0.875,0.25,2,4");
}

TEST_CASE("eval rejects mismatched method columns") {
    TempDir dir;
    spit(dir.path / "scores_id.csv", "sample_index,fdbd\n0,10\n");
    spit(dir.path / "scores_ood_x.csv", "sample_index,msp\n0,1\n");
    CHECK(cli::run({"fdbd", "eval", "--id", (dir.path / "scores_id.csv").string(), "--ood",
                    (dir.path / "scores_ood_x.csv").string(), "--out",
                    dir.path.string()}) == 2);
}

TEST_CASE("oracle subcommand verifies the bound on a small draw") {
    TempDir dir;
    CHECK(cli::run({"fdbd", "oracle", "--trials", "5", "--samples", "4", "--seed", "3",
                    "--out", dir.path.string()}) == 0);
    CHECK(fs::exists(dir.path / "oracle.json"));
}

TEST_CASE("synth subcommand runs the default-style lab on a tiny mixture") {
    TempDir dir;
    CHECK(cli::run({"fdbd", "synth", "--classes", "2", "--features", "2", "--sigma", "0.3",
                    "--r-grid", "0.8,1.0", "--samples", "3000", "--seed", "0", "--out",
                    dir.path.string()}) == 0);
    for (const char* name :
         {"prop1_0.json", "prop2_0.json", "prop2_1.json", "experiment_radial_shift.json",
          "buckets_radial_shift.csv", "scores_radial_shift.csv",
          "experiment_isotropic.json", "buckets_isotropic.csv", "scores_isotropic.csv"})
        CHECK(fs::exists(dir.path / name));
}

TEST_CASE("synth rejects radii outside the proposition-2 window") {
    TempDir dir;
    CHECK(cli::run({"fdbd", "synth", "--classes", "2", "--features", "2", "--sigma", "0.3",
                    "--r-grid", "2.0", "--samples", "500", "--out",
                    dir.path.string()}) == 2);
}

TEST_CASE("bench subcommand sweeps and writes JSON") {
    TempDir dir;
    CHECK(cli::run({"fdbd", "bench", "--methods", "fdbd", "--axis", "P", "--values",
                    "32,64", "--classes", "10", "--samples", "50", "--out",
                    dir.path.string()}) == 0);
    CHECK(fs::exists(dir.path / "bench_fdbd_P.json"));

    CHECK(cli::run({"fdbd", "bench", "--methods", "fdbd", "--axis", "P", "--values", "32",
                    "--classes", "10", "--samples", "50", "--out",
                    dir.path.string()}) == 1);
    CHECK(cli::run({"fdbd", "bench", "--methods", "fdbd", "--axis", "Q", "--values",
                    "32,64", "--out", dir.path.string()}) == 1);
}
