#include "fdbd/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "fdbd/geometry.hpp"
#include "fdbd/metrics.hpp"
#include "fdbd/rng.hpp"
#include "fdbd/synthetic.hpp"
#include "fdbd/tensorio.hpp"

namespace fs = std::filesystem;

namespace fdbd::cli {

namespace {

std::vector<Index> to_labels(const Vector& v) {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) {
        const double d = v(i);
        if (!(std::floor(d) == d) || d < 0.0 || d > 1e15)
            throw ValidationError("label " + std::to_string(d) + " at row " + std::to_string(i) +
                                  " is not a non-negative integer");
        out.push_back(static_cast<Index>(d));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& csv, const std::string& flag) {
    std::vector<double> out;
    for (const std::string& tok : split_list(csv)) {
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError(flag + ": cannot parse '" + tok + "' as a number");
        }
    }
    if (out.empty()) throw UsageError(flag + " must list at least one value");
    return out;
}

std::vector<Index> parse_index_list(const std::string& csv, const std::string& flag) {
    std::vector<Index> out;
    for (double v : parse_double_list(csv, flag)) {
        if (std::floor(v) != v || v < 1)
            throw UsageError(flag + ": expected positive integers");
        out.push_back(static_cast<Index>(v));
    }
    return out;
}

geometry::LinearHead load_head(const tensorio::Manifest& manifest) {
    return geometry::LinearHead(manifest.load("head_weights").to_matrix(),
                                manifest.load("head_bias").to_vector());
}

void write_flags_json(const fs::path& path, const scoring::ScoreTable& table) {
    nlohmann::json doc = nlohmann::json::array();
    for (const scoring::ScoreTable::Flag& f : table.flagged)
        doc.push_back({{"sample", f.sample}, {"reason", f.reason}, {"methods", f.methods}});
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << doc.dump(2) << "\n";
    if (!out.good()) throw IoError("write failed: " + path.string());
}

struct FitArgs {
    std::string manifest;
    std::string out = "stats";
    double react_percentile = 80.0;
};

int cmd_fit(const FitArgs& args) {
    const tensorio::Manifest manifest = tensorio::load_manifest(args.manifest);
    if (!manifest.has("train_features"))
        throw MissingRole("fit requires 'train_features' in the manifest");
    if (!manifest.has("train_labels"))
        throw MissingRole("fit requires 'train_labels' in the manifest");
    const Matrix train = manifest.load("train_features").to_matrix();
    const std::vector<Index> labels = to_labels(manifest.load("train_labels").to_vector());
    const scoring::TrainingStats stats = scoring::fit_stats(train, labels, args.react_percentile);
    scoring::save_stats(args.out, stats);
    std::cout << "fit: wrote stats bundle to " << args.out << " (classes=" << stats.classes()
              << ", features=" << stats.features() << ", bank=" << stats.normalized_bank.rows()
              << ", react_threshold=" << stats.react_threshold << ")\n";
    return 0;
}

struct ScoreArgs {
    std::string manifest;
    std::string stats;
    std::string methods = "fdbd";
    std::string shaping = "none";
    std::string out = ".";
    Index knn_k = 50;
    Index topk = 0;
};

int cmd_score(const ScoreArgs& args) {
    const tensorio::Manifest manifest = tensorio::load_manifest(args.manifest);
    const geometry::LinearHead head = load_head(manifest);

    std::optional<scoring::TrainingStats> stats;
    if (!args.stats.empty()) stats = scoring::load_stats(args.stats);

    std::vector<scoring::MethodSpec> specs;
    for (const std::string& name : split_list(args.methods)) {
        scoring::MethodSpec spec;
        spec.kind = scoring::parse_method(name);
        if (spec.kind == scoring::Method::TopK)
            spec.k = args.topk > 0 ? args.topk : head.classes() - 1;
        if (spec.kind == scoring::Method::Knn) spec.k = args.knn_k;
        specs.push_back(spec);
    }
    if (specs.empty()) throw UsageError("--methods must list at least one method");
    const scoring::ShapingConfig shaping = parse_shaping(args.shaping);

    std::vector<std::pair<std::string, Matrix>> sets;
    if (manifest.has("id_features")) sets.emplace_back("id", manifest.load("id_features").to_matrix());
    for (const auto& [name, path] : manifest.ood_sets)
        sets.emplace_back("ood_" + name, tensorio::read_array(path).to_matrix());
    if (sets.empty())
        throw UsageError("manifest provides neither id_features nor ood_features to score");

    fs::create_directories(args.out);
    for (const auto& [label, feats] : sets) {
        const scoring::ScoreTable table = scoring::score_batch(
            feats, head, stats ? &*stats : nullptr, specs, shaping);
        const fs::path csv = fs::path(args.out) / ("scores_" + label + ".csv");
        write_score_csv(csv, table,
                        {"role=" + label, "methods=" + args.methods, "shaping=" + args.shaping});
        write_flags_json(fs::path(args.out) / ("scores_" + label + ".flags.json"), table);
        std::cout << "score: " << label << " -> " << csv.string() << " (" << feats.rows()
                  << " samples, " << table.flagged.size() << " flagged)\n";
    }
    return 0;
}

struct EvalArgs {
    std::string id_csv;
    std::vector<std::string> ood_csvs;
    std::string out = ".";
};

std::string set_name(const fs::path& p) {
    std::string stem = p.stem().string();
    for (const std::string prefix : {"scores_ood_", "scores_"})
        if (stem.rfind(prefix, 0) == 0) return stem.substr(prefix.size());
    return stem;
}

int cmd_eval(const EvalArgs& args) {
    const scoring::ScoreTable id_table = scoring::read_score_csv(args.id_csv);
    if (id_table.scores.rows() == 0) throw EmptyInput("ID score CSV has no rows");

    std::vector<std::pair<std::string, scoring::ScoreTable>> ood_tables;
    for (const std::string& p : args.ood_csvs) {
        scoring::ScoreTable t = scoring::read_score_csv(p);
        if (t.methods != id_table.methods)
            throw ColumnMismatch("method columns of " + p + " do not match the ID CSV");
        if (t.scores.rows() == 0) throw EmptyInput("OOD score CSV has no rows: " + p);
        ood_tables.emplace_back(set_name(p), std::move(t));
    }

    std::vector<metrics::EvalResult> rows;
    for (std::size_t m = 0; m < id_table.methods.size(); ++m) {
        const auto col = static_cast<Index>(m);
        const std::vector<double> id_scores(id_table.scores.col(col).data(),
                                            id_table.scores.col(col).data() +
                                                id_table.scores.rows());
        double auroc_sum = 0.0, fpr_sum = 0.0;
        Index ood_total = 0;
        for (const auto& [name, table] : ood_tables) {
            const std::vector<double> ood_scores(table.scores.col(col).data(),
                                                 table.scores.col(col).data() +
                                                     table.scores.rows());
            metrics::EvalResult r;
            r.method = id_table.methods[m] + ":" + name;
            r.auroc = metrics::auroc(id_scores, ood_scores);
            r.fpr95 = metrics::fpr95(id_scores, ood_scores);
            r.n_id = id_table.scores.rows();
            r.n_ood = table.scores.rows();
            auroc_sum += r.auroc;
            fpr_sum += r.fpr95;
            ood_total += r.n_ood;
            rows.push_back(r);
        }
        metrics::EvalResult avg;
        avg.method = id_table.methods[m] + ":Average";
        avg.auroc = auroc_sum / static_cast<double>(ood_tables.size());
        avg.fpr95 = fpr_sum / static_cast<double>(ood_tables.size());
        avg.n_id = id_table.scores.rows();
        avg.n_ood = ood_total;
        rows.push_back(avg);
    }

    fs::create_directories(args.out);
    const fs::path out_csv = fs::path(args.out) / "eval.csv";
    metrics::write_eval_csv(out_csv, rows);
    for (const metrics::EvalResult& r : rows)
        std::cout << "eval: " << r.method << " auroc=" << r.auroc << " fpr95=" << r.fpr95
                  << "\n";
    std::cout << "eval: wrote " << out_csv.string() << "\n";
    return 0;
}

struct OracleArgs {
    Index trials = 100;
    Index classes = 5;
    Index features = 8;
    Index samples = 10;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_oracle(const OracleArgs& args) {
    if (args.trials < 1) throw UsageError("--trials must be >= 1");
    double max_violation = -std::numeric_limits<double>::infinity();
    double max_rel_gap = 0.0;
    long long pairs = 0, empty_regions = 0, tightness_checks = 0;

    for (Index t = 0; t < args.trials; ++t) {
        Rng rng(substream(args.seed, "oracle_trial_" + std::to_string(t)));
        Matrix W(args.classes, args.features);
        for (Index i = 0; i < args.classes; ++i)
            W.row(i) = rng.normal_vector(args.features).transpose();
        const geometry::LinearHead head(std::move(W), rng.normal_vector(args.classes));

        for (Index s = 0; s < args.samples; ++s) {
            const Vector z = rng.normal_vector(args.features);
            const geometry::DistanceProfile profile = geometry::boundary_distances(head, z);
            const auto [nearest_class, nearest_dist] = geometry::nearest_boundary(head, z);
            for (Index c = 0; c < head.classes(); ++c) {
                if (c == profile.predicted) continue;
                const std::optional<double> exact = geometry::exact_distance(head, z, c);
                if (!exact) {
                    ++empty_regions;
                    continue;
                }
                ++pairs;
                max_violation = std::max(max_violation, profile.dists(c) - *exact);
                if (c == nearest_class) {
                    ++tightness_checks;
                    max_rel_gap = std::max(max_rel_gap, std::abs(nearest_dist - *exact) /
                                                            std::max(*exact, 1e-300));
                }
            }
        }
    }

    const bool pass = max_violation <= 1e-8 && max_rel_gap <= 1e-6;
    std::cout << "oracle: trials=" << args.trials << " classes=" << args.classes
              << " features=" << args.features << " samples_per_trial=" << args.samples << "\n"
              << "oracle: pairs_checked=" << pairs << " empty_regions_skipped=" << empty_regions
              << " tightness_checks=" << tightness_checks << "\n"
              << "oracle: max_lower_bound_violation=" << max_violation
              << " (tolerance 1e-8)\n"
              << "oracle: max_nearest_class_rel_gap=" << max_rel_gap << " (tolerance 1e-6)\n"
              << "oracle: " << (pass ? "PASS" : "FAIL") << "\n";

    if (!args.out.empty()) {
        fs::create_directories(args.out);
        nlohmann::json doc{{"trials", args.trials},
                           {"classes", args.classes},
                           {"features", args.features},
                           {"samples_per_trial", args.samples},
                           {"pairs_checked", pairs},
                           {"empty_regions_skipped", empty_regions},
                           {"tightness_checks", tightness_checks},
                           {"max_lower_bound_violation", max_violation},
                           {"max_nearest_class_rel_gap", max_rel_gap},
                           {"pass", pass}};
        std::ofstream f(fs::path(args.out) / "oracle.json", std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write oracle.json");
        f << doc.dump(2) << "\n";
    }
    return pass ? 0 : 3;
}

struct SynthArgs {
    Index classes = 10;
    Index features = 16;
    double sigma = 0.3;
    std::string r_grid = "0.8,1.0";
    Index samples = 50000;
    std::uint64_t seed = 0;
    std::string out = "synth_out";
};

int cmd_synth(const SynthArgs& args) {
    std::vector<double> grid = parse_double_list(args.r_grid, "--r-grid");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    fs::create_directories(args.out);
    const synthetic::EtfMixture mix =
        synthetic::build_etf(args.classes, args.features, args.sigma, args.seed);

    bool all_pass = true;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        const synthetic::Prop1Report report = synthetic::verify_prop1(
            mix, grid[i], grid[i + 1], args.samples, substream(args.seed, "prop1_" + std::to_string(i)));
        synthetic::write_prop1_json(
            fs::path(args.out) / ("prop1_" + std::to_string(i) + ".json"), report);
        std::cout << "synth: prop1 r0=" << report.r0 << " r1=" << report.r1
                  << " mean_r0=" << report.mean_r0 << " mean_r1=" << report.mean_r1
                  << " z=" << report.z_stat << " paired_ratio=" << report.paired_ratio << " "
                  << (report.pass ? "PASS" : "FAIL") << "\n";
        all_pass &= report.pass;
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const synthetic::Prop2Report report = synthetic::verify_prop2(
            mix, grid[i], args.samples, substream(args.seed, "prop2_" + std::to_string(i)));
        synthetic::write_prop2_json(
            fs::path(args.out) / ("prop2_" + std::to_string(i) + ".json"), report);
        std::cout << "synth: prop2 r=" << report.r << " mean_dense=" << report.mean_id_region
                  << " mean_outside=" << report.mean_ood_region << " z=" << report.z_stat
                  << " rounds=" << report.rounds << " " << (report.pass ? "PASS" : "FAIL")
                  << "\n";
        all_pass &= report.pass;
    }

    for (const std::string kind : {"radial_shift", "isotropic"}) {
        const synthetic::SynthExperiment exp =
            synthetic::synth_ood_experiment(mix, args.samples, kind, substream(args.seed, "exp_" + kind));
        synthetic::write_experiment_json(fs::path(args.out) / ("experiment_" + kind + ".json"),
                                         exp);
        synthetic::write_buckets_csv(fs::path(args.out) / ("buckets_" + kind + ".csv"),
                                     exp.buckets);
        synthetic::write_scores_csv(fs::path(args.out) / ("scores_" + kind + ".csv"), exp);
        std::cout << "synth: experiment " << kind << " auroc_fdbd=" << exp.fdbd.auroc
                  << " auroc_avg_dist=" << exp.avg_dist.auroc << "\n";
    }

    std::cout << "synth: " << (all_pass ? "PASS" : "FAIL") << "\n";
    return all_pass ? 0 : 3;
}

struct BenchArgs {
    std::string methods = "fdbd,msp";
    std::string axis = "P";
    std::string values;
    Index classes = 100;
    Index features = 512;
    Index bank = 10000;
    Index samples = 1000;
    Index knn_k = 50;
    std::uint64_t seed = 0;
    std::string out = ".";
};

int cmd_bench(const BenchArgs& args) {
    if (args.values.empty()) throw UsageError("--values must list the sweep axis points");
    const std::vector<Index> values = parse_index_list(args.values, "--values");

    metrics::BenchConfig cfg;
    cfg.classes = args.classes;
    cfg.features = args.features;
    cfg.bank = args.bank;
    cfg.samples = args.samples;
    cfg.knn_k = args.knn_k;
    cfg.seed = args.seed;

    fs::create_directories(args.out);
    for (const std::string& name : split_list(args.methods)) {
        const scoring::Method method = scoring::parse_method(name);
        const metrics::LatencyReport report = metrics::bench_scaling(method, args.axis, values, cfg);
        const fs::path out_json =
            fs::path(args.out) / ("bench_" + name + "_" + args.axis + ".json");
        metrics::write_latency_json(out_json, report);
        const double axis_factor = static_cast<double>(report.points.back().value) /
                                   static_cast<double>(report.points.front().value);
        std::cout << "bench: " << name << " axis=" << args.axis << " r2=" << report.r2
                  << " growth=" << report.growth_factor << "x over " << axis_factor
                  << "x axis span -> " << out_json.string() << "\n";
    }
    return 0;
}

}  // namespace

scoring::ShapingConfig parse_shaping(const std::string& spec) {
    std::string mode = spec;
    std::optional<double> pct;
    if (const auto pos = spec.find(':'); pos != std::string::npos) {
        mode = spec.substr(0, pos);
        const std::string rest = spec.substr(pos + 1);
        try {
            std::size_t used = 0;
            pct = std::stod(rest, &used);
            if (used != rest.size()) throw std::invalid_argument(rest);
        } catch (const std::exception&) {
            throw UsageError("--shaping: cannot parse percentile '" + rest + "'");
        }
    }

    scoring::ShapingConfig cfg;
    if (mode == "none") {
        if (pct) throw UsageError("--shaping none takes no percentile");
        cfg.mode = scoring::ShapingMode::None;
        return cfg;
    }
    if (mode == "react") {
        cfg.mode = scoring::ShapingMode::React;
        cfg.percentile = 80.0;
    } else if (mode == "ash_s") {
        cfg.mode = scoring::ShapingMode::AshS;
        cfg.percentile = 90.0;
    } else if (mode == "scale") {
        cfg.mode = scoring::ShapingMode::Scale;
        cfg.percentile = 90.0;
    } else {
        throw UsageError("--shaping mode must be none, react, ash_s or scale (got '" + mode +
                         "')");
    }
    if (pct) {
        if (!(*pct > 0.0 && *pct < 100.0))
            throw UsageError("--shaping percentile must lie in (0, 100)");
        cfg.percentile = *pct;
    }
    return cfg;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const auto comma = csv.find(',', start);
        const std::string tok =
            csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!tok.empty()) out.push_back(tok);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

int run(int argc, const char* const* argv) {
    CLI::App app{"Decision-boundary OOD scoring toolkit"};
    app.require_subcommand(1);

    FitArgs fit_args;
    CLI::App* fit = app.add_subcommand("fit", "Fit training statistics from a manifest");
    fit->add_option("--manifest", fit_args.manifest, "Manifest JSON path")->required();
    fit->add_option("--out", fit_args.out, "Output directory for the stats bundle");
    fit->add_option("--react-percentile", fit_args.react_percentile,
                    "Percentile of training activations used as the ReAct clip level");

    ScoreArgs score_args;
    CLI::App* score = app.add_subcommand("score", "Score feature sets from a manifest");
    score->add_option("--manifest", score_args.manifest, "Manifest JSON path")->required();
    score->add_option("--stats", score_args.stats, "Stats bundle directory (from fit)");
    score->add_option("--methods", score_args.methods,
                      "Comma list: fdbd, avg_dist, topk, msp, energy, mds, knn");
    score->add_option("--shaping", score_args.shaping,
                      "Activation shaping mode[:percentile], e.g. ash_s:90");
    score->add_option("--knn-k", score_args.knn_k, "Neighbor count for knn");
    score->add_option("--topk", score_args.topk,
                      "k for the topk method (default: all |C|-1 boundaries)");
    score->add_option("--out", score_args.out, "Output directory for score CSVs");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "AUROC/FPR95 from score CSVs");
    eval->add_option("--id", eval_args.id_csv, "ID score CSV")->required();
    eval->add_option("--ood", eval_args.ood_csvs, "OOD score CSVs")->required()->expected(-1);
    eval->add_option("--out", eval_args.out, "Output directory for eval.csv");

    OracleArgs oracle_args;
    CLI::App* oracle = app.add_subcommand("oracle", "Verify the distance lower bound exactly");
    oracle->add_option("--trials", oracle_args.trials, "Random heads to draw");
    oracle->add_option("--classes", oracle_args.classes, "Classes per head");
    oracle->add_option("--features", oracle_args.features, "Feature dimension");
    oracle->add_option("--samples", oracle_args.samples, "Features per head");
    oracle->add_option("--seed", oracle_args.seed, "RNG seed");
    oracle->add_option("--out", oracle_args.out, "Optional directory for oracle.json");

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "Gaussian-mixture proposition lab");
    synth->add_option("--classes", synth_args.classes, "Mixture components");
    synth->add_option("--features", synth_args.features, "Feature dimension");
    synth->add_option("--sigma", synth_args.sigma, "Component standard deviation");
    synth->add_option("--r-grid", synth_args.r_grid, "Comma list of sphere radii");
    synth->add_option("--samples", synth_args.samples, "Monte-Carlo samples per draw");
    synth->add_option("--seed", synth_args.seed, "RNG seed");
    synth->add_option("--out", synth_args.out, "Output directory");

    BenchArgs bench_args;
    CLI::App* bench = app.add_subcommand("bench", "Per-sample scoring latency sweeps");
    bench->add_option("--methods", bench_args.methods, "Comma list of methods to time");
    bench->add_option("--axis", bench_args.axis, "Sweep axis: C, P or N");
    bench->add_option("--values", bench_args.values, "Comma list of axis values");
    bench->add_option("--classes", bench_args.classes, "Fixed |C| when not the axis");
    bench->add_option("--features", bench_args.features, "Fixed P when not the axis");
    bench->add_option("--bank", bench_args.bank, "Fixed KNN bank size when not the axis");
    bench->add_option("--samples", bench_args.samples, "Timed calls per sweep point");
    bench->add_option("--knn-k", bench_args.knn_k, "Neighbor count for knn");
    bench->add_option("--seed", bench_args.seed, "RNG seed");
    bench->add_option("--out", bench_args.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (fit->parsed()) return cmd_fit(fit_args);
        if (score->parsed()) return cmd_score(score_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (oracle->parsed()) return cmd_oracle(oracle_args);
        if (synth->parsed()) return cmd_synth(synth_args);
        if (bench->parsed()) return cmd_bench(bench_args);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const BadK& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace fdbd::cli
