// Command-line front end: fit, predict, decompose, simulate, benchmark.
//
// Exit codes: 0 success, 2 parse error, 3 validation error, 4 fit error.

#include <charconv>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <cfglmm/cfglmm.hpp>

namespace {

using namespace cfglmm;

constexpr int exit_ok = 0;
constexpr int exit_parse = 2;
constexpr int exit_validation = 3;
constexpr int exit_fit = 4;

template <class T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) throw ParseError(std::string(flag) + ": empty list element");
        if constexpr (std::is_same_v<T, double>) {
            out.push_back(parse_number(item, 0, flag));
        } else {
            T v{};
            const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (ec != std::errc() || p != item.data() + item.size())
                throw ParseError(std::string(flag) + ": not an integer: '" + item + "'");
            out.push_back(v);
        }
    }
    if (out.empty()) throw ParseError(std::string(flag) + ": empty list");
    return out;
}

FamilyTag family_or_throw(const std::string& name) {
    const auto tag = parse_family(name);
    if (!tag) throw ParseError("unknown family '" + name + "'");
    return *tag;
}

// ---------------------------------------------------------------------------

struct FitArgs {
    std::string data;
    std::string family;
    std::uint64_t seed = 1;
    double train_frac = 0.75;
    double decay = 0.9;
    int patience = 5;
    std::string out = "model.cfg.json";
    std::string trace;
};

int run_fit(const FitArgs& a) {
    const FamilyTag family = family_or_throw(a.family);
    FitConfig cfg;
    cfg.rng_seed = a.seed;
    cfg.train_fraction = a.train_frac;
    cfg.bandwidth_decay = a.decay;
    cfg.patience = a.patience;
    cfg.validate();
    const Dataset d = read_dataset_csv(a.data, family);
    const CfModel m = fit_cf(d, cfg);
    save_model(m, a.out);
    if (!a.trace.empty()) write_trace_csv(a.trace, m.trace);
    std::cout << "accepted " << m.layers.size() << " of " << m.trace.size() << " scales; validation deviance "
              << format_number(m.initial_valid_loss) << " -> " << format_number(m.final_valid_loss()) << '\n';
    return exit_ok;
}

struct PredictArgs {
    std::string model;
    std::string sites;
    std::string out;
};

int run_predict(const PredictArgs& a) {
    const CfModel m = load_model(a.model);
    const SiteTable s = read_sites_csv(a.sites, m.covariate_names);
    const auto pred = predict(m, s.sites, s.covariates, s.offset);
    CsvWriter w(a.out);
    w.header({"x", "y", "mu_lin", "mu", "z_total", "var_z", "cov"});
    for (Index i = 0; i < pred.size(); ++i) {
        const auto& p = pred[i];
        w.numbers({s.sites[i].x, s.sites[i].y, p.mu_lin, p.mu, p.z_total, p.var_z, p.cov});
    }
    return exit_ok;
}

struct DecomposeArgs {
    std::string model;
    std::string sites;
    std::string bands = "1.9,0.5";
    std::string out;
};

std::string side_file(const std::string& out, const std::string& suffix) {
    std::filesystem::path p(out);
    const auto stem = p.stem().string();
    return (p.parent_path() / (stem + suffix + p.extension().string())).string();
}

int run_decompose(const DecomposeArgs& a) {
    const auto edges = parse_list<double>(a.bands, "--bands");
    const CfModel m = load_model(a.model);
    const SiteTable s = read_sites_csv(a.sites, m.covariate_names);
    const auto dec = decompose(m, s.sites, edges);
    const auto names = band_names(edges.size() + 1);

    for (Index b = 0; b < names.size(); ++b)
        if (dec.layers_per_band[b] == 0)
            std::cerr << "warning: band '" << names[b] << "' contains no accepted layer; its column is zero\n";

    CsvWriter w(a.out);
    std::vector<std::string> cols{"x", "y"};
    cols.insert(cols.end(), names.begin(), names.end());
    cols.push_back("z_total");
    w.header(cols);
    for (Index i = 0; i < s.sites.size(); ++i) {
        std::vector<double> v{s.sites[i].x, s.sites[i].y};
        v.insert(v.end(), dec.band_values[i].begin(), dec.band_values[i].end());
        v.push_back(dec.z_total[i]);
        w.numbers(v);
    }

    CsvWriter sd(side_file(a.out, "_band_sd"));
    sd.header({"band", "lower", "upper", "layers", "sd"});
    for (Index b = 0; b < names.size(); ++b) {
        const double lower = b < edges.size() ? edges[b] : 0.0;
        const double upper = b == 0 ? std::numeric_limits<double>::infinity() : edges[b - 1];
        sd.row({names[b], format_number(lower), format_number(upper), std::to_string(dec.layers_per_band[b]),
                format_number(dec.band_sds[b])});
    }
    return exit_ok;
}

struct SimulateArgs {
    std::string family = "poisson";
    Index n = 2000;
    double beta0 = 0.5;
    std::string multiscale;
    Index test = 2000;
    std::uint64_t seed = 1;
    std::string out;
};

void write_truth(CsvWriter& w, const char* set, const Dataset& d, const SimTruth& t) {
    for (Index i = 0; i < d.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        std::vector<std::string> f{set, format_number(d.sites[i].x), format_number(d.sites[i].y),
                                   format_number(t.eta[r]), format_number(t.mu[r]), format_number(t.z[r])};
        for (const auto& c : t.components) f.push_back(format_number(c[r]));
        w.row(f);
    }
}

int run_simulate(const SimulateArgs& a) {
    const FamilyTag family = family_or_throw(a.family);
    SimScenario sc = SimScenario::poisson(a.beta0, a.n, a.test);
    if (family == FamilyTag::bernoulli) sc = SimScenario::binomial(a.beta0, a.n, a.test);
    if (family == FamilyTag::gaussian) sc = SimScenario::gaussian(a.beta0, a.n, a.test);
    if (!a.multiscale.empty()) {
        sc.multiscale = parse_list<double>(a.multiscale, "--multiscale");
        for (double h : *sc.multiscale)
            if (!(h > 0.0)) throw DataError(DataError::Kind::bad_argument, "--multiscale bandwidths must be positive");
    }
    if (a.n < 1) throw DataError(DataError::Kind::bad_argument, "--n must be positive");
    const SimData sim = simulate(sc, a.seed);

    write_dataset_csv(a.out + "_train.csv", sim.train);
    if (sim.test.size() > 0) write_dataset_csv(a.out + "_test.csv", sim.test);
    CsvWriter w(a.out + "_truth.csv");
    std::vector<std::string> cols{"set", "x", "y", "eta", "mu", "z"};
    for (Index k = 0; k < sim.train_truth.components.size(); ++k) cols.push_back("Z" + std::to_string(k + 1));
    w.header(cols);
    write_truth(w, "train", sim.train, sim.train_truth);
    write_truth(w, "test", sim.test, sim.test_truth);
    return exit_ok;
}

struct BenchmarkArgs {
    std::string suite;
    Index trials = 20;
    std::string sizes = "500,1000,2000";
    std::uint64_t seed = 1;
    std::string out;
};

void write_reports(const std::string& dir, const std::string& suite, const std::vector<ExperimentReport>& reports) {
    CsvWriter trials(dir + "/trials.csv");
    CsvWriter summary(dir + "/summary.csv");
    CsvWriter longf(dir + "/long.csv");

    const Index k = reports.front().scenario.beta.size() + 1;
    std::vector<std::string> names;
    if (reports.front().scenario.multiscale) names = band_names(reports.front().scenario.multiscale->size());

    std::vector<std::string> cols{"suite", "n", "beta0", "trial", "seed", "ok", "error",
                                  "cf_rmse_in", "cf_rmse_out", "glm_rmse_in", "glm_rmse_out"};
    for (Index j = 0; j < k; ++j) cols.push_back("cf_beta" + std::to_string(j));
    for (Index j = 0; j < k; ++j) cols.push_back("glm_beta" + std::to_string(j));
    cols.insert(cols.end(), {"fit_seconds", "accepted_scales"});
    for (const auto& n : names) cols.push_back("corr_" + n);
    trials.header(cols);
    summary.header({"suite", "n", "beta0", "metric", "min", "q25", "median", "q75", "max"});
    longf.header({"suite", "n", "beta0", "trial", "method", "metric", "value"});

    for (const auto& r : reports) {
        const std::string n = std::to_string(r.scenario.n_train), b0 = format_number(r.scenario.beta0);
        for (const auto& t : r.trials) {
            std::string err = t.error;
            for (auto& ch : err)
                if (ch == ',' || ch == '\n') ch = ' ';
            std::vector<std::string> f{suite, n, b0, std::to_string(t.trial), std::to_string(t.seed),
                                       t.ok ? "1" : "0", err};
            auto num = [&](double v) { f.push_back(format_number(v)); };
            num(t.cf.rmse_in);
            num(t.cf.rmse_out);
            num(t.glm.rmse_in);
            num(t.glm.rmse_out);
            for (Index j = 0; j < k; ++j)
                num(t.ok ? t.cf.beta_hat.beta[static_cast<Eigen::Index>(j)] : std::nan(""));
            for (Index j = 0; j < k; ++j)
                num(t.ok ? t.glm.beta_hat.beta[static_cast<Eigen::Index>(j)] : std::nan(""));
            num(t.fit_seconds);
            num(static_cast<double>(t.accepted_scales));
            for (Index b = 0; b < names.size(); ++b)
                num(t.scale_correlations ? (*t.scale_correlations)[b].value : std::nan(""));
            trials.row(f);
            if (!t.ok) continue;

            auto emit = [&](const char* method, const std::string& metric, double v) {
                longf.row({suite, n, b0, std::to_string(t.trial), method, metric, format_number(v)});
            };
            emit("cf_glmm", "rmse_in", t.cf.rmse_in);
            emit("cf_glmm", "rmse_out", t.cf.rmse_out);
            emit("glm", "rmse_in", t.glm.rmse_in);
            emit("glm", "rmse_out", t.glm.rmse_out);
            for (Index j = 0; j < k; ++j) {
                emit("cf_glmm", "beta" + std::to_string(j), t.cf.beta_hat.beta[static_cast<Eigen::Index>(j)]);
                emit("glm", "beta" + std::to_string(j), t.glm.beta_hat.beta[static_cast<Eigen::Index>(j)]);
            }
            emit("cf_glmm", "fit_seconds", t.fit_seconds);
            for (Index b = 0; b < names.size() && t.scale_correlations; ++b)
                emit("cf_glmm", "corr_" + names[b], (*t.scale_correlations)[b].value);
        }
        for (const auto& s : r.summary)
            summary.row({suite, n, b0, s.metric, format_number(s.q.min), format_number(s.q.q25),
                         format_number(s.q.median), format_number(s.q.q75), format_number(s.q.max)});
    }
}

int run_benchmark(const BenchmarkArgs& a) {
    const auto sizes = parse_list<Index>(a.sizes, "--sizes");
    for (Index n : sizes)
        if (n < 20) throw DataError(DataError::Kind::bad_argument, "--sizes entries must be at least 20");
    if (a.trials < 1) throw DataError(DataError::Kind::bad_argument, "--trials must be positive");
    std::filesystem::create_directories(a.out);

    if (a.suite == "timing") {
        const auto curve = timing_curve(sizes, SimScenario::poisson(0.5, sizes.front(), 0), a.seed);
        CsvWriter t(a.out + "/timing.csv");
        t.header({"n", "seconds", "accepted_scales"});
        CsvWriter longf(a.out + "/long.csv");
        longf.header({"suite", "n", "beta0", "trial", "method", "metric", "value"});
        for (const auto& p : curve) {
            t.row({std::to_string(p.n), format_number(p.seconds), std::to_string(p.accepted_scales)});
            longf.row({"timing", std::to_string(p.n), "0.5", "0", "cf_glmm", "seconds", format_number(p.seconds)});
        }
        if (curve.size() >= 2)
            std::cout << "scaling exponent " << format_number(scaling_exponent(curve.front(), curve.back())) << '\n';
        return exit_ok;
    }

    std::vector<ExperimentReport> reports;
    for (Index n : sizes) {
        for (double b0 : {-1.5, 0.5}) {
            SimScenario sc;
            if (a.suite == "prediction")
                sc = SimScenario::poisson(b0, n);
            else if (a.suite == "binomial")
                sc = SimScenario::binomial(b0, n);
            else
                sc = SimScenario::multiscale_poisson(b0, n);
            reports.push_back(run_experiment(sc, a.trials, derive_seed(a.seed, n)));
            std::cerr << a.suite << " n=" << n << " beta0=" << b0 << " done\n";
        }
    }
    write_reports(a.out, a.suite, reports);
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coarse-to-fine spatial GLMM"};
    app.require_subcommand(1);

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "Fit a model to a dataset CSV");
    fit->add_option("--data", fa.data, "Dataset CSV (x,y,response[,offset][,covariates...])")
        ->required()
        ->check(CLI::ExistingFile);
    fit->add_option("--family", fa.family, "gaussian | poisson | bernoulli")->required();
    fit->add_option("--seed", fa.seed, "Random seed")->capture_default_str();
    fit->add_option("--train-frac", fa.train_frac, "Training fraction of the holdout split")->capture_default_str();
    fit->add_option("--decay", fa.decay, "Bandwidth decay per scale")->capture_default_str();
    fit->add_option("--patience", fa.patience, "Consecutive rejections before stopping")->capture_default_str();
    fit->add_option("--out", fa.out, "Model file")->capture_default_str();
    fit->add_option("--trace", fa.trace, "Per-scale trace CSV");

    PredictArgs pa;
    auto* pred = app.add_subcommand("predict", "Predict at new sites");
    pred->add_option("--model", pa.model, "Model file")->required()->check(CLI::ExistingFile);
    pred->add_option("--sites", pa.sites, "Sites CSV (x,y[,offset],covariates...)")
        ->required()
        ->check(CLI::ExistingFile);
    pred->add_option("--out", pa.out, "Output CSV")->required();

    DecomposeArgs da;
    auto* dec = app.add_subcommand("decompose", "Split the spatial process into bandwidth bands");
    dec->add_option("--model", da.model, "Model file")->required()->check(CLI::ExistingFile);
    dec->add_option("--sites", da.sites, "Sites CSV")->required()->check(CLI::ExistingFile);
    dec->add_option("--bands", da.bands, "Descending band edges")->capture_default_str();
    dec->add_option("--out", da.out, "Output CSV")->required();

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
    sim->add_option("--family", sa.family, "gaussian | poisson | bernoulli")->capture_default_str();
    sim->add_option("--n", sa.n, "Training sites")->capture_default_str();
    sim->add_option("--beta0", sa.beta0, "Intercept")->capture_default_str();
    sim->add_option("--multiscale", sa.multiscale, "Component bandwidths, e.g. 3.0,0.8,0.3");
    sim->add_option("--test", sa.test, "Test sites")->capture_default_str();
    sim->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
    sim->add_option("--out", sa.out, "Output prefix")->required();

    BenchmarkArgs ba;
    auto* bench = app.add_subcommand("benchmark", "Run a Monte Carlo experiment suite");
    bench->add_option("--suite", ba.suite, "prediction | multiscale | timing | binomial")
        ->required()
        ->check(CLI::IsMember({"prediction", "multiscale", "timing", "binomial"}));
    bench->add_option("--trials", ba.trials, "Trials per cell")->capture_default_str();
    bench->add_option("--sizes", ba.sizes, "Training sizes")->capture_default_str();
    bench->add_option("--seed", ba.seed, "Random seed")->capture_default_str();
    bench->add_option("--out", ba.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_parse;
    }

    try {
        if (*fit) return run_fit(fa);
        if (*pred) return run_predict(pa);
        if (*dec) return run_decompose(da);
        if (*sim) return run_simulate(sa);
        if (*bench) return run_benchmark(ba);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_parse;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_validation;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_validation;
    } catch (const FitError& e) {
        std::cerr << "fit error: " << e.what() << '\n';
        return exit_fit;
    } catch (const std::exception& e) {
        std::cerr << "fit error: " << e.what() << '\n';
        return exit_fit;
    }
    return exit_parse;
}
