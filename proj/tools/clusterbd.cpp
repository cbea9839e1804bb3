// Command-line front end: runs one experiment and writes its CSV table.

#include "clusterbd/clusterbd.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace clusterbd;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> drops;
    std::optional<int> fades;
    std::optional<int> threads;
    std::string out;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "JSON file overriding the experiment defaults")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--drops", o.drops, "user drops")->check(CLI::PositiveNumber);
    cmd->add_option("--fades", o.fades, "fading realizations per drop")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", o.threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--out", o.out, "CSV output path (default: stdout)");
    cmd->add_flag("--deterministic", o.deterministic, "fixed-order reduction for byte-identical output");
}

harness::SimConfig build_config(const std::string& experiment, const Options& o) {
    harness::SimConfig c = harness::preset(experiment);
    if (!o.config.empty()) harness::load_config_file(c, o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.drops) c.drops = *o.drops;
    if (o.fades) c.fades = *o.fades;
    if (o.threads) c.threads = *o.threads;
    if (o.deterministic) c.deterministic = true;
    c.validate();
    return c;
}

int run(const std::string& experiment, const Options& o) {
    const harness::SimConfig c = build_config(experiment, o);
    const harness::ExperimentResult r = harness::run_experiment(experiment, c);
    if (o.out.empty()) {
        harness::write_csv(std::cout, r);
    } else {
        std::ofstream f(o.out);
        if (!f) throw std::runtime_error("cannot write '" + o.out + "'");
        harness::write_csv(f, r);
    }
    std::cerr << experiment << ": version " << harness::kVersion << ", seed " << c.seed << ", " << c.drops << " drops x "
              << c.fades << " fades, " << r.wall_seconds << " s";
    if (r.failed_drops) std::cerr << ", " << r.failed_drops << " failed drops";
    std::cerr << '\n';
    return 0;
}

/// Quick end-to-end sanity checks on small random instances.
int selftest() {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "ok   " : "FAIL ") << name << '\n';
        if (!ok) ++failures;
    };

    Rng rng(7);
    std::vector<CMatrix> h;
    for (int k = 0; k < 6; ++k) h.push_back(complex_gaussian_matrix(rng, 2, 12));
    const auto sol = precoding::bd_precoders(h, 4);
    double leak = 0.0;
    for (int i = 0; i < 6; ++i)
        for (int k = 0; k < 6; ++k)
            if (i != k) leak = std::max(leak, (h[i] * sol.users[k].precoder).norm() / h[i].norm());
    check("block diagonalization nulls inter-user interference", leak < 1e-8);

    const auto gram = precoding::bd_precoders_gram(h, {}, 4);
    bool same = gram.has_value();
    for (int k = 0; same && k < 6; ++k)
        same = (gram->users[k].singular_values - sol.users[k].singular_values).norm() < 1e-9;
    check("Gram and SVD routes agree", same);

    const double p = 50.0;
    const auto tpc = power::allocate(sol, power::Scheme::TPC, p);
    const auto opt = power::allocate(sol, power::Scheme::OPT, p);
    const auto us = power::allocate(sol, power::Scheme::US, p);
    const auto swf = power::allocate(sol, power::Scheme::SWF, p);
    check("TPC >= OPT >= US, SWF", tpc.rate >= opt.rate - 1e-9 && opt.rate >= us.rate - 1e-9 && opt.rate >= swf.rate - 1e-9);
    check("OPT KKT residual below 1e-6", opt.kkt_residual < 1e-6);

    const auto dpc = power::dpc_sum_capacity_tpc(h, 3 * p, 3);
    check("DPC >= BD with total power", dpc.rate >= tpc.rate - 1e-6);

    RVector g(2);
    g << 2.0, 0.5;
    const auto wf = power::waterfill(g, 3.0);
    check("water-filling example", std::abs(wf.power(0) - 2.25) < 1e-12 && std::abs(wf.power(1) - 0.75) < 1e-12);

    check("CSI reduction 7/19", evaluation::csi_reduction_fraction(7, 19) == evaluation::Fraction{7, 19});

    const auto layout = geometry::build_layout(7, 1, 1.0);
    check("B=7 layout with one tier has 49 cells", layout.num_cells() == 49);

    harness::SimConfig c = harness::preset("sum-rates");
    c.users_per_cluster = 6;
    const auto reports = harness::run_trial(c, 11, 12);
    bool shared = true;
    for (const auto& r : reports) shared = shared && r.channel_hash == reports.front().channel_hash;
    check("systems of a trial share one channel realization", shared);

    std::cout << (failures ? "selftest failed" : "selftest passed") << '\n';
    return failures ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clustered multi-cell block diagonalization simulator"};
    app.require_subcommand(1);
    Options o;
    const std::vector<std::pair<std::string, std::string>> experiments{
        {"coord-distance", "utility, mean minimum rate and effective sum rate versus coordination distance"},
        {"cluster-size", "effective sum rate per cell versus cluster size"},
        {"sum-rates", "per-cell sum rate of every system versus users per cluster"},
        {"user-cdf", "distribution of per-user mean rates"},
        {"csi-error", "sum rates versus channel estimation error"},
    };
    for (const auto& [name, help] : experiments) add_common(app.add_subcommand(name, help), o);
    app.add_subcommand("selftest", "quick consistency checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        if (cmd == "selftest") return selftest();
        return run(cmd, o);
    } catch (const ConvergenceError& e) {
        std::cerr << "error: solver did not converge: " << e.what() << " (residual " << e.kkt_residual << ")\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: invalid configuration: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
