// Command-line front end: plan / sample / simulate / verify / anme.
// Exit codes: 0 success, 1 validation failure, 2 numerical failure.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "specshard/specshard.hpp"

namespace ss = specshard;

namespace {

std::vector<double> parse_real_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            throw ss::ValidationError(std::string(what) + ": bad number '" + item + "'");
        }
        while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
        if (used != item.size())
            throw ss::ValidationError(std::string(what) + ": bad number '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ss::ValidationError(std::string(what) + ": empty list");
    return out;
}

// stdout unless a path is given
class OutputTarget {
public:
    explicit OutputTarget(const std::string& path) {
        if (path.empty()) return;
        file_.open(path);
        if (!file_) throw ss::ValidationError("cannot open output file '" + path + "'");
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

ss::Strategy parse_strategy_arg(const std::string& name) {
    const auto s = ss::strategy_from_name(name);
    if (!s) throw ss::ValidationError("unknown strategy '" + name + "'");
    return *s;
}

ss::DesignKind parse_design_arg(const std::string& name) {
    const auto d = ss::design_from_name(name);
    if (!d) throw ss::ValidationError("unknown design '" + name + "'");
    return *d;
}

ss::PlanFile load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ss::ValidationError("cannot open plan file '" + path + "'");
    return ss::read_plan_csv(in);
}

// numpy-style draws are weight-parameterized; every other design realizes
// the plan's marginals directly
ss::SamplingDesign design_for_plan(const ss::PlanFile& pf, ss::DesignKind kind) {
    if (kind == ss::DesignKind::numpy_style) {
        const double ratio = static_cast<double>(pf.plan.sample_size) /
                             static_cast<double>(pf.plan.terms());
        return ss::SamplingDesign::from_weights(ss::prism_draw_weights(pf.lambda, ratio),
                                                pf.plan.sample_size);
    }
    return ss::SamplingDesign::from_probabilities(kind, pf.plan.pi, pf.plan.sample_size);
}

struct PlanArgs {
    std::string lambda_text;
    std::string matrix_path;
    std::string strategy = "unbiased";
    std::string out;
    std::uint64_t n = 0;
    double keep_ratio = 0.0;
    std::uint64_t clients = 1;
    std::uint64_t seed = 0;
    std::uint64_t prism_trials = 100000;
    double svd_tol = 1e-12;
};

int run_plan(const PlanArgs& a) {
    if (a.lambda_text.empty() == a.matrix_path.empty())
        throw ss::ValidationError("plan: give exactly one of --lambda or --matrix");
    std::vector<double> lambda;
    if (!a.lambda_text.empty()) {
        lambda = parse_real_list(a.lambda_text, "--lambda");
    } else {
        std::ifstream in(a.matrix_path);
        if (!in) throw ss::ValidationError("cannot open matrix file '" + a.matrix_path + "'");
        const ss::Matrix w = ss::read_matrix(in);
        lambda = ss::decompose(w, a.svd_tol).lambda;
    }
    if ((a.n == 0) == (a.keep_ratio == 0.0))
        throw ss::ValidationError("plan: give exactly one of --n or --keep-ratio");
    const std::size_t n =
        a.n != 0 ? static_cast<std::size_t>(a.n) : ss::keep_count(lambda.size(), a.keep_ratio);

    ss::PlanOptions opts;
    opts.prism_marginal_trials = a.prism_trials;
    const ss::InclusionPlan plan = ss::plan_for_spectrum(
        lambda, n, parse_strategy_arg(a.strategy), a.clients, opts, a.keep_ratio);

    OutputTarget out(a.out);
    ss::write_plan_csv(out.stream(), plan, lambda, a.seed);
    return 0;
}

struct SampleArgs {
    std::string plan_path;
    std::string design = "cps";
    std::string out;
    std::uint64_t trials = 1;
    std::uint64_t seed = 0;
};

int run_sample(const SampleArgs& a) {
    const ss::PlanFile pf = load_plan(a.plan_path);
    const ss::SamplingDesign design = design_for_plan(pf, parse_design_arg(a.design));
    ss::RngStream rng = ss::RngStream::derive(a.seed, {ss::stream_purpose::shard_draw});
    OutputTarget out(a.out);
    std::ostream& os = out.stream();
    for (std::uint64_t t = 0; t < a.trials; ++t) {
        std::vector<std::size_t> draw = design.sample(rng);
        std::sort(draw.begin(), draw.end());
        for (std::size_t j = 0; j < draw.size(); ++j) os << (j ? " " : "") << draw[j];
        os << '\n';
    }
    return 0;
}

struct SimulateArgs {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

int run_simulate(const SimulateArgs& a) {
    ss::ExperimentConfig cfg;
    if (!a.config_path.empty()) cfg = ss::parse_config_file(a.config_path);
    else ss::validate_config(cfg);
    if (a.seed_given) cfg.seed = a.seed;
    OutputTarget out(a.out);
    ss::fedsim::run_simulation(cfg, out.stream());
    return 0;
}

struct VerifyArgs {
    std::string plan_path;
    std::string design = "cps";
    std::uint64_t trials = 100000;
    std::uint64_t seed = 0;
    std::uint64_t clients = 0; // 0: take the plan's group size
};

int run_verify(const VerifyArgs& a) {
    const ss::PlanFile pf = load_plan(a.plan_path);
    const std::size_t group =
        a.clients != 0
            ? static_cast<std::size_t>(a.clients)
            : (pf.plan.strategy == ss::Strategy::collective ? pf.plan.group_size : 1);
    const double closed =
        ss::collective_discrepancy(pf.lambda, pf.plan.pi, pf.plan.omega, group);

    const ss::SamplingDesign design = design_for_plan(pf, parse_design_arg(a.design));
    ss::RngStream rng = ss::RngStream::derive(a.seed, {ss::stream_purpose::shard_draw});
    const ss::McEstimate mc =
        group > 1 ? ss::mc_discrepancy_collective(pf.lambda, pf.plan, design, group, a.trials, rng)
                  : ss::mc_discrepancy_unbiased(pf.lambda, pf.plan, design, a.trials, rng);

    const double diff = std::abs(mc.mean - closed);
    const double tol = 3.0 * mc.se;
    char line[256];
    std::printf("strategy=%s n=%zu clients=%zu design=%s trials=%llu\n",
                ss::strategy_name(pf.plan.strategy), pf.plan.sample_size, group, a.design.c_str(),
                static_cast<unsigned long long>(a.trials));
    std::printf("closed_form=%.17g\n", closed);
    std::printf("mc_mean=%.17g\n", mc.mean);
    std::printf("mc_se=%.17g\n", mc.se);
    std::snprintf(line, sizeof(line), "%s closed_form=%.6g mc_mean=%.6g diff=%.6g tol_3se=%.6g",
                  diff <= tol ? "PASS" : "FAIL", closed, mc.mean, diff, tol);
    std::printf("%s\n", line);
    return diff <= tol ? 0 : 1;
}

struct AnmeArgs {
    std::vector<std::string> plan_paths;
};

int run_anme(const AnmeArgs& a) {
    std::vector<std::vector<double>> pis;
    std::vector<std::size_t> ns;
    for (const std::string& path : a.plan_paths) {
        const ss::PlanFile pf = load_plan(path);
        pis.push_back(pf.plan.pi);
        ns.push_back(pf.plan.sample_size);
    }
    const ss::AnmeReport report = ss::anme(pis, ns);
    for (std::size_t l = 0; l < a.plan_paths.size(); ++l) {
        if (report.defined[l])
            std::printf("layer=%s anme=%.17g\n", a.plan_paths[l].c_str(), report.per_layer[l]);
        else
            std::printf("layer=%s anme=undefined\n", a.plan_paths[l].c_str());
    }
    if (report.defined_count)
        std::printf("network=%.17g\n", report.network);
    else
        std::printf("network=undefined\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectral sharding toolkit"};
    app.require_subcommand(1);

    PlanArgs plan_args;
    CLI::App* plan = app.add_subcommand("plan", "compute an inclusion plan, write it as CSV");
    plan->add_option("--lambda", plan_args.lambda_text, "comma-separated singular values");
    plan->add_option("--matrix", plan_args.matrix_path, "matrix file to decompose instead");
    plan->add_option("--n", plan_args.n, "terms per shard");
    plan->add_option("--keep-ratio", plan_args.keep_ratio, "keep ratio r, n = ceil(N r)");
    plan->add_option("--strategy", plan_args.strategy,
                     "topn | topnscaled | unbiased | collective | prism | prismunbiased");
    plan->add_option("--clients", plan_args.clients, "group size C for collective planning");
    plan->add_option("--seed", plan_args.seed, "seed recorded in the CSV header");
    plan->add_option("--prism-trials", plan_args.prism_trials,
                     "draws behind prism marginal estimates");
    plan->add_option("--svd-tol", plan_args.svd_tol, "relative truncation threshold for --matrix");
    plan->add_option("--out", plan_args.out, "output path (default stdout)");

    SampleArgs sample_args;
    CLI::App* sample = app.add_subcommand("sample", "draw index sets under a plan");
    sample->add_option("--plan", sample_args.plan_path, "plan CSV")->required();
    sample->add_option("--design", sample_args.design, "cps | brewer | minsupport | numpy");
    sample->add_option("--trials", sample_args.trials, "number of draws");
    sample->add_option("--seed", sample_args.seed, "rng seed");
    sample->add_option("--out", sample_args.out, "output path (default stdout)");

    SimulateArgs sim_args;
    CLI::App* simulate = app.add_subcommand("simulate", "run the federated simulation");
    simulate->add_option("--config", sim_args.config_path, "experiment config file");
    CLI::Option* seed_opt = simulate->add_option("--seed", sim_args.seed, "override config seed");
    simulate->add_option("--out", sim_args.out, "output path (default stdout)");

    VerifyArgs verify_args;
    CLI::App* verify = app.add_subcommand("verify", "Monte-Carlo check of a plan's closed form");
    verify->add_option("--plan", verify_args.plan_path, "plan CSV")->required();
    verify->add_option("--design", verify_args.design, "cps | brewer | minsupport | numpy");
    verify->add_option("--trials", verify_args.trials, "Monte-Carlo trials");
    verify->add_option("--seed", verify_args.seed, "rng seed");
    verify->add_option("--clients", verify_args.clients,
                       "averaged estimators per trial (default: plan's group size)");

    AnmeArgs anme_args;
    CLI::App* anme_cmd = app.add_subcommand("anme", "normalized marginal entropy of plan CSVs");
    anme_cmd->add_option("plans", anme_args.plan_paths, "plan CSV paths")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    sim_args.seed_given = seed_opt->count() > 0;
    try {
        if (plan->parsed()) return run_plan(plan_args);
        if (sample->parsed()) return run_sample(sample_args);
        if (simulate->parsed()) return run_simulate(sim_args);
        if (verify->parsed()) return run_verify(verify_args);
        if (anme_cmd->parsed()) return run_anme(anme_args);
    } catch (const ss::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ss::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
