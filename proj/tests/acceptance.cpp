// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "netpc/bench.hpp"
#include "oracle_qp.hpp"
#include "test_util.hpp"

using namespace netpc;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = NETPC_CONFIG_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double max_seconds, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > max_seconds) {
        o.pass = false;
        o.detail += " (over time budget)";
    }
    if (!o.pass) ++failures;
    std::printf("%s  %-28s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string list(const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? " " : "") + fmt(v[k]);
    return s + "]";
}

bool strictly_decreasing(const std::vector<double>& v) {
    for (std::size_t k = 1; k < v.size(); ++k)
        if (!(v[k] < v[k - 1])) return false;
    return true;
}

/// Each value may exceed its predecessor by at most `band` relative.
bool non_increasing_within(const std::vector<double>& v, double band) {
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[k - 1] * (1.0 + band)) return false;
    return true;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main() {
    const auto bench = testutil::benchmark();
    const Scenario& sc = bench.scenario;

    criterion("solver-oracle", 10.0, [] {
        CounterRng rng(derive_seed(testutil::kBenchmarkSeed, "acceptance-oracle"));
        double worst = 0.0;
        for (int n = 0; n < 200; ++n) {
            const auto inst = testutil::random_instance(rng, false, 30);
            worst = std::max(worst, oracle::max_primal_gap(solve(inst.problem), oracle::solve(inst.problem)));
        }
        return Outcome{worst <= 1e-8, "max coord gap " + fmt(worst) + " over 200 instances"};
    });

    criterion("truncation-identity", 120.0, [&] {
        double worst = 0.0;
        for (int k : {5, 11}) {
            const auto pc = run_pc(sc, k);
            const auto d = run_dtpc(sc, k, sc.graph().diameter());
            worst = std::max(worst, testutil::max_state_gap(d.states, pc.states));
        }
        return Outcome{worst <= 1e-7, "max_t ||x_dtpc - x_pc|| = " + fmt(worst) + " (k = 5, 11)"};
    });

    criterion("trajectory-gap-decay", 300.0, [&] {
        const auto curve = trajectory_gap_curve(sc, 11, {0, 1, 2, 3, 4, 5, 6});
        const auto fit = make_profile({0, 1, 2, 3, 4}, {curve.max_norms.begin(), curve.max_norms.begin() + 5});
        const bool ok = strictly_decreasing(curve.max_norms) && fit.slope() < 0.0 && fit.r2 >= 0.8;
        return Outcome{ok, "gaps " + list(curve.max_norms) + " slope " + fmt(fit.slope()) + " r2 " + fmt(fit.r2)};
    });

    criterion("regret-sweeps", 600.0, [&] {
        const auto opt = run_opt(sc);
        std::vector<double> by_k, by_kappa;
        for (int k = 2; k <= 12; ++k) by_k.push_back(regret(run_dtpc(sc, k, 2), opt).value);
        for (int kappa = 0; kappa <= 4; ++kappa) by_kappa.push_back(regret(run_dtpc(sc, 11, kappa), opt).value);
        const double a = by_kappa[3], b = by_kappa[4];
        const double floor_gap = std::abs(a - b) / std::max(std::abs(a), std::abs(b));
        const bool ok = non_increasing_within(by_k, 0.02) && non_increasing_within(by_kappa, 0.02) && floor_gap < 0.05;
        return Outcome{ok, "k sweep " + list(by_k) + " kappa sweep " + list(by_kappa) + " floor gap " + fmt(floor_gap)};
    });

    criterion("spatial-decay", 30.0, [] {
        const auto built = build_scenario(load_config(kConfigDir / "decay_path.cfg"));
        const auto prof = kkt_inverse_decay(initial_problem(built.scenario, 8));
        const bool ok = prof.rho > 0.0 && prof.rho < 1.0 && prof.r2 >= 0.9;
        return Outcome{ok, "rho " + fmt(prof.rho) + " r2 " + fmt(prof.r2) + " bins " + std::to_string(prof.fitted_points)};
    });

    criterion("truncation-gap-decay", 60.0, [&] {
        const auto p = initial_problem(sc, 11);
        const auto gap = truncation_gap(p, 0, {0, 1, 2, 3, 4, 5, 6, 8});
        const std::vector<double> head(gap.max_norms.begin(), gap.max_norms.begin() + 7);
        const bool ok = strictly_decreasing(head) && gap.max_norms.back() <= 1e-8;
        return Outcome{ok, "node 0 gaps " + list(gap.max_norms)};
    });

    criterion("principle-of-optimality", 30.0, [] {
        CounterRng rng(derive_seed(testutil::kBenchmarkSeed, "acceptance-popt"));
        double worst = 0.0;
        int checked = 0;
        while (checked < 50) {
            const auto inst = testutil::random_instance(rng, checked % 3 == 2);
            if (inst.problem.horizon < 2) continue;
            worst = std::max(worst, popt_check(solve(inst.problem), inst.problem));
            ++checked;
        }
        return Outcome{worst <= 1e-7, "max residual " + fmt(worst) + " over 50 instances"};
    });

    criterion("causality-locality", 120.0, [&] {
        const auto& g = sc.graph();
        const int k = 11;
        long violations = 0;
        AccessLog pc_log;
        run_pc(sc, k, &pc_log);
        for (int t = 0; t < pc_log.steps(); ++t) violations += pc_log.max_disturbance_index(t) > t + k - 1;
        for (int kappa : {2, 8}) {
            AccessLog log;
            run_dtpc(sc, k, kappa, &log);
            for (int t = 0; t < log.steps(); ++t) {
                violations += log.max_disturbance_index(t) > t + k - 1;
                for (NodeId i = 0; i < g.node_count(); ++i) {
                    const auto ts = khop(g, i, kappa);
                    const auto& a = log.at(t, i);
                    violations += a.max_disturbance_index > t + k - 1;
                    for (NodeId j = 0; j < g.node_count(); ++j) {
                        violations += a.local_nodes[j] && !ts.has_state_node(j);
                        violations += a.input_nodes[j] && !ts.has_input_node(j);
                    }
                }
            }
        }
        return Outcome{violations == 0, std::to_string(violations) + " violations (PC k11, DTPC k11 kappa 2, 8)"};
    });

    criterion("uncertainty", 120.0, [] {
        const auto cfg = load_config(kConfigDir / "uncertainty.cfg");
        const auto built = build_scenario(cfg);
        const Scenario& u = built.scenario;
        const int k = 10, kappa = 3;
        const double R = 5.0, rate = 2.0;

        const auto dtpc = run_dtpc(u, k, kappa);
        const auto exact = run_udtpc(u, k, kappa, built.truth, ForecastModel{});
        const double gap = testutil::max_state_gap(exact.states, dtpc.states);

        const auto opt = run_opt(u);
        auto model_regret = [&](ForecastKind kind) {
            return regret(run_udtpc(u, k, kappa, built.truth, ForecastModel{kind, R, rate, 1}), opt).value;
        };
        const double r_sqrt = model_regret(ForecastKind::SqrtTDecay);
        const double r_exp = model_regret(ForecastKind::ConstExp);
        const double r_const = model_regret(ForecastKind::Const);

        const ModelForecaster cf(built.truth, ForecastModel{ForecastKind::Const, R, rate, 1}, u.seed);
        const double phi0 = cumulative_phi(cf, built.truth, 0);
        const double expect = (u.horizon + 1) * R * R;
        const double phi_rel = std::abs(phi0 - expect) / expect;

        const bool a = gap <= 1e-9;
        const bool b = r_sqrt <= r_exp && r_exp <= 2.0 * r_const && r_const <= 2.0 * r_exp;
        const bool c = phi_rel <= 1e-12;
        return Outcome{a && b && c, "(a) gap " + fmt(gap) + " (b) regrets sqrt " + fmt(r_sqrt) + " const_exp " +
                                        fmt(r_exp) + " const " + fmt(r_const) + " (c) Phi_0 rel err " + fmt(phi_rel)};
    });

    criterion("determinism", 300.0, [] {
        const fs::path root = fs::temp_directory_path() / "netpc_acceptance_determinism";
        fs::remove_all(root);
        int configs = 0, files = 0, mismatches = 0;
        for (const auto& entry : fs::directory_iterator(kConfigDir)) {
            if (entry.path().extension() != ".cfg") continue;
            ++configs;
            const auto cfg = load_config(entry.path());
            const auto stem = entry.path().stem().string();
            std::vector<fs::path> first, second;
            for (int run = 0; run < 2; ++run) {
                const fs::path dir = root / stem / std::to_string(run);
                auto out = run_experiment(cfg, dir).files;
                if (cfg.decay) {
                    for (auto& f : run_decay(cfg, DecayMode::Truncation, dir).files) out.push_back(f);
                }
                (run == 0 ? first : second) = out;
            }
            mismatches += first.size() != second.size();
            for (std::size_t n = 0; n < std::min(first.size(), second.size()); ++n) {
                ++files;
                mismatches += first[n].filename() != second[n].filename() || slurp(first[n]) != slurp(second[n]);
            }
        }
        fs::remove_all(root);
        return Outcome{configs > 0 && mismatches == 0, std::to_string(configs) + " configs, " + std::to_string(files) +
                                                           " files, " + std::to_string(mismatches) + " mismatches"};
    });

    std::printf("%s: %d criterion failure(s)\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
