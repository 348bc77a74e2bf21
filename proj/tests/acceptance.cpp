// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "test_util.hpp"

namespace {

using namespace capkv;
using namespace capkv::testing;
using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = true;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 == 1 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

// AC1: closed form vs Monte-Carlo plug-in, 50 specs, 200k samples each.
Outcome ac1() {
    const auto start = Clock::now();
    CounterRng rng(101);
    int failures = 0;
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const ChannelSpec s = random_channel(rng, 8);
        const double exact = exact_capacity(s);
        const McEstimate mc = mc_capacity(s, 200000, derive_seed(1, t));
        const double tol = std::max(3.0 * mc.standard_error, 0.02 * exact);
        const double err = std::abs(exact - mc.value);
        worst = std::max(worst, err / tol);
        failures += err > tol;
    }
    const double elapsed = seconds_since(start);
    return {failures == 0 && elapsed <= 60.0,
            std::to_string(failures) + "/50 outside max(3 SE, 2%); worst err/tol " + fmt("%.3f", worst) +
                "; runtime " + fmt("%.1f", elapsed) + " s (limit 60)"};
}

// AC2: exact capacity equals H(Y) - H(noise).
Outcome ac2() {
    CounterRng rng(102);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const ChannelSpec s = random_channel(rng, 8);
        const double diff = gaussian_entropy(cholesky_factorize(output_covariance(s))) -
                            gaussian_entropy(cholesky_factorize(s.noise_cov));
        worst = std::max(worst, std::abs(exact_capacity(s) - diff));
    }
    return {worst <= 1e-8, "max |exact - entropy difference| = " + fmt("%.3g", worst) + " over 100 specs (tol 1e-8)"};
}

// AC3: query mean never enters.
Outcome ac3() {
    CounterRng rng(103);
    int exact_changes = 0, mc_failures = 0;
    for (int t = 0; t < 10; ++t) {
        ChannelSpec s = random_channel(rng, 6);
        const double before = exact_capacity(s);
        const McEstimate mc_before = mc_capacity(s, 50000, derive_seed(3, t));
        for (double& x : s.query_mean) {
            x += 25.0 * rng.normal();
        }
        exact_changes += exact_capacity(s) != before;
        const McEstimate mc_after = mc_capacity(s, 50000, derive_seed(3, t));
        mc_failures += std::abs(mc_after.value - mc_before.value) > 3.0 * mc_before.standard_error;
    }
    return {exact_changes == 0 && mc_failures == 0,
            "exact changed on " + std::to_string(exact_changes) + "/10 shifts; MC beyond 3 SE on " +
                std::to_string(mc_failures) + "/10"};
}

// AC4: rank-one gain exactness and the first-order upper bound.
Outcome ac4() {
    CounterRng rng(104);
    double worst = 0.0;
    int bound_violations = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng.below(16);
        const Matrix a = random_spd(rng, n);
        const Vector u = random_vector(rng, n);
        const double w = 10.0 * rng.uniform();
        Matrix updated = a;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                updated(i, j) += w * u[i] * u[j];
            }
        }
        const SpdFactor f = cholesky_factorize(a);
        const double gain = rank_one_logdet_gain(f, u, w);
        worst = std::max(worst, std::abs(gain - (eigen_logdet(updated) - eigen_logdet(a))));
        bound_violations += gain > w * quadratic_form(f, u);
    }
    return {worst <= 1e-9 && bound_violations == 0,
            "max |gain - from-scratch| = " + fmt("%.3g", worst) + " (tol 1e-9); first-order bound violated " +
                std::to_string(bound_violations) + "/1000"};
}

// AC5: eigenvalue form vs closed form under isotropy.
Outcome ac5() {
    CounterRng rng(105);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = 1 + rng.below(8), m = 1 + rng.below(8), c = 1 + rng.below(8);
        const Matrix keys = random_matrix(rng, c, d);
        const Matrix outputs = random_matrix(rng, m, c);
        const double sigma = 0.1 + 3.0 * rng.uniform();
        const double eps = 0.1 + 3.0 * rng.uniform();
        const double exact = exact_capacity(isotropic_channel(keys, outputs, sigma * sigma, eps));
        worst = std::max(worst, std::abs(small_noise_capacity(outputs * keys, sigma, eps) - exact));
    }
    return {worst <= 1e-8, "max |eigenvalue form - exact| = " + fmt("%.3g", worst) + " over 100 (tol 1e-8)"};
}

struct OracleRun {
    std::vector<harness::OracleComparison> results;
    double seconds = 0.0;
};

// 500 seeded instances shared by AC6 and AC7: N in [4, 12], budget in [1, min(6, N)].
const OracleRun& oracle_run() {
    static const OracleRun run = [] {
        OracleRun r;
        const auto start = Clock::now();
        for (std::uint64_t seed = 0; seed < 500; ++seed) {
            CounterRng rng(seed, 606);
            const std::size_t n = 4 + rng.below(9);
            const std::size_t b = 1 + rng.below(std::min<std::size_t>(6, n));
            const std::size_t d = 2 + rng.below(7);
            auto [cache, stats] = harness::random_oracle_instance(n, d, seed);
            r.results.push_back(harness::compare_selectors(cache, stats, 5.0, b));
        }
        r.seconds = seconds_since(start);
        return r;
    }();
    return run;
}

Outcome ac6() {
    const OracleRun& run = oracle_run();
    const double bound = 1.0 - 1.0 / std::exp(1.0);
    int violations = 0;
    std::vector<double> ratios;
    for (const auto& c : run.results) {
        ratios.push_back(c.greedy_ratio());
        violations += c.greedy < bound * c.exhaustive;
    }
    return {violations == 0 && run.seconds <= 300.0,
            std::to_string(violations) + "/500 below (1 - 1/e); median greedy/exhaustive " +
                fmt("%.6f", median(ratios)) + ", min " + fmt("%.6f", *std::min_element(ratios.begin(), ratios.end())) +
                "; runtime " + fmt("%.1f", run.seconds) + " s (limit 300)"};
}

Outcome ac7() {
    const OracleRun& run = oracle_run();
    int reached = 0;
    std::vector<std::size_t> below;
    for (std::size_t i = 0; i < run.results.size(); ++i) {
        if (run.results[i].one_shot_vs_greedy() >= 0.9) {
            ++reached;
        } else {
            below.push_back(i);
        }
    }
    const double frac = reached / 500.0;

    // Duplicated directions: {e1, e1, e2} at tau = 0 scores (1/3, 1/3, 1/2).
    const KvCache dup = make_cache(Matrix(3, 2, 1.0), Matrix{{1, 0}, {1, 0}, {0, 1}});
    const QueryStats st = QueryStats::from_queries(Matrix{{0, 0}});
    const Scores s = score_capkv(dup, st, 0.0);
    const bool suppressed = s[0] < s[2] && s[1] < s[2] && std::abs(s[0] - 1.0 / 3.0) < 1e-12 &&
                            std::abs(s[2] - 0.5) < 1e-12;
    std::string detail = "one-shot >= 90% of greedy on " + fmt("%.1f", 100.0 * frac) + "% of 500 (need 95%)";
    if (!below.empty()) {
        detail += "; below threshold: instances";
        for (std::size_t i = 0; i < std::min<std::size_t>(below.size(), 10); ++i) {
            detail += " " + std::to_string(below[i]);
        }
    }
    detail += std::string("; duplicate suppression ") + (suppressed ? "holds" : "FAILS");
    return {frac >= 0.95 && suppressed, detail};
}

// AC8: nested-subset monotonicity and the first-order bound.
Outcome ac8() {
    CounterRng rng(108);
    int k_bad = 0, u_bad = 0, ku_bad = 0;
    double ku_worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 2 + rng.below(40);
        const KvCache cache = random_cache(rng, n, 1 + rng.below(16), 1 + rng.below(16));
        const IndexSet big = random_subset(rng, n, 1 + rng.below(n));
        IndexSet small = big;
        small.resize(rng.below(big.size()));
        const CapacityReport a = capacity_report(cache, big, big.size());
        const CapacityReport b = capacity_report(cache, small, small.size());
        k_bad += a.k_capacity < b.k_capacity - 1e-9;
        u_bad += a.u_capacity < b.u_capacity - 1e-9;
        ku_bad += a.ku_capacity < b.ku_capacity - 1e-9;
        ku_worst = std::max(ku_worst, b.ku_capacity - a.ku_capacity);
    }
    int bound = 0;
    for (int t = 0; t < 1000; ++t) {
        const Matrix keys = random_matrix(rng, 1 + rng.below(12), 1 + rng.below(12), 0.1 + rng.uniform());
        double sum = 0.0;
        for (std::size_t i = 0; i < keys.rows(); ++i) {
            sum += squared_norm(keys.row(i));
        }
        bound += k_capacity(keys) > sum + 1e-12;
    }
    // KU sums v_i k_i^T before squaring, so cancelling tokens can lower it.
    std::string detail = "nested-pair violations over 200 (tol 1e-9): K " + std::to_string(k_bad) + ", U " +
                         std::to_string(u_bad) + ", KU " + std::to_string(ku_bad);
    if (ku_bad > 0) {
        detail += " (largest KU drop " + fmt("%.3g", ku_worst) + " nats; not PSD-monotone)";
    }
    detail += "; first-order bound violations " + std::to_string(bound) + "/1000";
    return {k_bad == 0 && u_bad == 0 && ku_bad == 0 && bound == 0, detail};
}

std::vector<PolicyConfig> six_policies() {
    std::vector<PolicyConfig> out;
    for (PolicyKind k : {PolicyKind::capkv, PolicyKind::knorm, PolicyKind::keydiff, PolicyKind::sink,
                         PolicyKind::expected_attention, PolicyKind::snapkv}) {
        PolicyConfig p;
        p.kind = k;
        out.push_back(p);
    }
    return out;
}

harness::SweepInstance default_instance(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_queries = 64;
    auto [cache, stream] = generate_synthetic(spec);
    return {std::move(cache), stream.slice(0, 32), stream.slice(32, 64)};
}

// AC9: proxy vs negated distortion across 8 seeds x 6 policies x 4 ratios.
Outcome ac9() {
    harness::SweepConfig cfg;
    cfg.policies = six_policies();
    std::vector<harness::SweepRow> rows;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const auto r = harness::compression_sweep(default_instance(derive_seed(909, seed)), cfg, seed);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    const auto c = harness::capacity_performance_correlation(rows);
    bool pass = true;
    std::string detail = "n=" + std::to_string(c.ku.n_points);
    for (const auto& [name, r] : {std::pair{"K", c.k}, std::pair{"U", c.u}, std::pair{"KU", c.ku}}) {
        pass = pass && r.rho >= 0.5 && r.p_value < 0.05;
        detail += std::string("; ") + name + " rho " + fmt("%.3f", r.rho) + " p " + fmt("%.2g", r.p_value);
    }
    return {pass, detail + " (need rho >= 0.5, p < 0.05)"};
}

// AC10: streaming safety over 20 random configs.
Outcome ac10() {
    CounterRng rng(110);
    int size_bad = 0, schedule_bad = 0, reappear = 0, events = 0;
    const std::vector<PolicyKind> kinds{PolicyKind::capkv, PolicyKind::knorm, PolicyKind::keydiff, PolicyKind::sink,
                                        PolicyKind::expected_attention};
    for (int t = 0; t < 20; ++t) {
        harness::StreamConfig cfg;
        cfg.eviction_period = 1 + rng.below(64);
        cfg.budget = 1 + rng.below(96);
        cfg.total_steps = 50 + rng.below(350);
        cfg.policy.kind = kinds[rng.below(kinds.size())];
        cfg.policy.sink_initial = rng.below(6);
        cfg.d_key = 2 + rng.below(14);
        cfg.d_value = 2 + rng.below(14);
        cfg.n_clusters = 1 + rng.below(8);
        cfg.drift = 0.05 * rng.uniform();
        cfg.seed = derive_seed(10, t);
        std::set<std::uint32_t> evicted;
        std::vector<std::uint32_t> current;
        for (const auto& s : harness::streaming_simulation(cfg)) {
            current.push_back(static_cast<std::uint32_t>(s.step));
            if (!s.evicted) {
                continue;
            }
            ++events;
            size_bad += s.cache_size > cfg.budget;
            schedule_bad += s.step % cfg.eviction_period != 0;
            for (std::uint32_t p : s.retained) {
                reappear += evicted.count(p);
                reappear += !std::binary_search(current.begin(), current.end(), p);
            }
            for (std::uint32_t p : current) {
                if (!std::binary_search(s.retained.begin(), s.retained.end(), p)) {
                    evicted.insert(p);
                }
            }
            current = s.retained;
        }
    }
    bool snap_rejected = false;
    try {
        harness::StreamConfig cfg;
        cfg.policy.kind = PolicyKind::snapkv;
        harness::streaming_simulation(cfg);
    } catch (const Error& e) {
        snap_rejected = e.code() == ErrorCode::PolicyUnsupportedInStreaming;
    }
    return {size_bad == 0 && schedule_bad == 0 && reappear == 0 && snap_rejected && events > 0,
            std::to_string(events) + " events; oversize " + std::to_string(size_bad) + ", off-period " +
                std::to_string(schedule_bad) + ", reappearing " + std::to_string(reappear) + "; SnapKV " +
                (snap_rejected ? "rejected" : "NOT rejected")};
}

// AC11: CapKV doubling ratio at d = 128.
Outcome ac11() {
    const auto start = Clock::now();
    PolicyConfig p;
    p.kind = PolicyKind::capkv;
    const auto rows = harness::runtime_bench({4096, 8192}, 128, p, 5, 11);
    const double elapsed = seconds_since(start);
    const double ratio = rows[1].doubling_ratio.value_or(1e9);
    return {ratio <= 2.6 && elapsed <= 120.0,
            "time(8192)/time(4096) = " + fmt("%.3f", ratio) + " (limit 2.6); medians " +
                fmt("%.4f", rows[0].median_seconds) + " s / " + fmt("%.4f", rows[1].median_seconds) + " s; runtime " +
                fmt("%.1f", elapsed) + " s (limit 120)"};
}

// AC12: tau sweep grid and tau = 0 invariance.
Outcome ac12() {
    harness::SweepConfig cfg;
    std::vector<harness::SweepInstance> a, b;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        harness::SweepInstance inst = default_instance(derive_seed(1212, seed));
        harness::SweepInstance other = inst;
        other.observed = default_instance(derive_seed(3434, seed)).observed;
        a.push_back(std::move(inst));
        b.push_back(std::move(other));
    }
    const auto ra = harness::tau_sweep(a, harness::kDefaultTaus, cfg);
    const auto ra2 = harness::tau_sweep(a, harness::kDefaultTaus, cfg, 4);
    const auto rb = harness::tau_sweep(b, harness::kDefaultTaus, cfg);
    bool shape = ra.size() == 5 * 4;
    for (std::size_t i = 0; shape && i < ra.size(); ++i) {
        shape = ra[i].tau == harness::kDefaultTaus[i / 4] && ra[i].ratio == cfg.ratios[i % 4];
    }
    bool invariant = true, deterministic = true;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        if (ra[i].tau == 0.0) {
            invariant = invariant && ra[i].mean_distortion == rb[i].mean_distortion &&
                        ra[i].mean_ku_capacity == rb[i].mean_ku_capacity;
        }
        deterministic = deterministic && ra[i].mean_distortion == ra2[i].mean_distortion;
    }
    std::string grid;
    for (std::size_t i = 0; i < ra.size(); i += 4) {
        grid += " tau=" + harness::format_double(ra[i].tau) + ":" + fmt("%.4f", ra[i + 1].mean_distortion);
    }
    return {shape && invariant && deterministic,
            std::string("5x4 grid ") + (shape ? "ok" : "WRONG") + "; tau=0 invariant " + (invariant ? "yes" : "NO") +
                "; deterministic " + (deterministic ? "yes" : "NO") + "; distortion at ratio 0.5:" + grid};
}

// AC13: KVPK round trip and malformed files.
Outcome ac13() {
    CounterRng rng(113);
    int mismatches = 0;
    for (int t = 0; t < 50; ++t) {
        KvCache c = random_cache(rng, 1 + rng.below(200), 1 + rng.below(64), 1 + rng.below(64));
        for (double& x : c.keys.data()) {
            x = static_cast<float>(x);
        }
        for (double& x : c.values.data()) {
            x = static_cast<float>(x);
        }
        const std::vector<char> bytes = encode_kvpk(c);
        const KvpkFile f = decode_kvpk(bytes);
        mismatches += !(f.cache.keys == c.keys && f.cache.values == c.values && f.cache.positions == c.positions &&
                        encode_kvpk(f.cache) == bytes);
    }
    const KvCache c = random_cache(rng, 12, 5, 4);
    const std::vector<char> good = encode_kvpk(c);
    auto code_of = [](const std::vector<char>& bytes) {
        try {
            decode_kvpk(bytes);
        } catch (const Error& e) {
            return std::string(to_string(e.code()));
        }
        return std::string("accepted");
    };
    std::vector<char> bad_magic = good;
    bad_magic[1] = '?';
    const std::string m = code_of(bad_magic);
    const std::string tr = code_of(std::vector<char>(good.begin(), good.end() - 3));
    std::vector<char> shape = good;
    shape.insert(shape.end(), 4 * (5 + 4 + 1), 0);
    const std::string sh = code_of(shape);
    const bool errors_ok = m == "BadMagic" && tr == "TruncatedPayload" && sh == "ShapeMismatch";
    return {mismatches == 0 && errors_ok, std::to_string(mismatches) + "/50 round-trip mismatches; bad magic -> " + m +
                                              ", truncated -> " + tr + ", extra entry -> " + sh};
}

// AC14: every subcommand is byte-identical across repeats and thread counts.
Outcome ac14() {
    const auto dir = scratch_dir("acceptance");
    std::vector<std::string> failures;
    auto out_of = [&](const std::string& args, const std::string& file) {
        const CliResult r = run_cli(args, dir);
        if (r.exit_code != 0) {
            failures.push_back("'" + args + "' exit " + std::to_string(r.exit_code) + ": " + r.err);
        }
        return file.empty() ? r.out : r.out + slurp(dir / file);
    };
    auto check = [&](const std::string& name, const std::string& args, const std::string& file,
                     bool threaded) {
        const std::string a = out_of(args + (threaded ? " --threads 1" : ""), file);
        const std::string b = out_of(args + (threaded ? " --threads 1" : ""), file);
        const std::string c = threaded ? out_of(args + " --threads 4", file) : a;
        if (a.empty() || a != b || a != c) {
            failures.push_back(name);
        }
    };
    check("gen", "gen --n 128 --d-key 32 --d-value 32 --seed 5 --out g.kvpk", "g.kvpk", false);
    check("evict", "evict --in g.kvpk --policy capkv --ratio 0.5", "", false);
    check("capacity", "capacity --in g.kvpk --all --query-cov empirical", "", false);
    check("sweep", "sweep --seed 9 --n 96 --d-key 16 --d-value 16 --replicates 3 --out s.csv", "s.csv", true);
    check("sweep-tau", "sweep --seed 9 --n 64 --d-key 16 --d-value 16 --taus 0,1,5,7,10 --replicates 2", "", true);
    check("correlate", "correlate --in s.csv", "", false);
    check("stream", "stream --seed 3 --period 64 --budget 128 --steps 600 --d-key 16 --d-value 16", "", true);
    check("oracle", "oracle --seed 4 --n 10 --budget 4 --instances 20", "", true);

    // Timing columns differ run to run; everything else must match.
    auto bench_rows = [&](const std::string& args) {
        std::istringstream in(out_of(args, ""));
        harness::Table t = harness::read_csv(in);
        const std::size_t c1 = t.column("median_seconds"), c2 = t.column("doubling_ratio");
        for (auto& row : t.rows) {
            row[c1].clear();
            row[c2].clear();
        }
        return t.rows;
    };
    const auto b1 = bench_rows("bench --sizes 256,512 --d 16 --repeats 3 --seed 2");
    const auto b2 = bench_rows("bench --sizes 256,512 --d 16 --repeats 3 --seed 2");
    if (b1.empty() || b1 != b2) {
        failures.push_back("bench (non-timing columns)");
    }
    std::string detail = failures.empty() ? "8 subcommands identical across repeats and --threads 1/4 "
                                            "(bench timing columns excluded)"
                                          : "mismatch:";
    for (const auto& f : failures) {
        detail += " " + f;
    }
    return {failures.empty(), detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"AC1 closed-form capacity vs Monte-Carlo", ac1},
        {"AC2 entropy-difference replay", ac2},
        {"AC3 mean invariance", ac3},
        {"AC4 determinant lemma exactness", ac4},
        {"AC5 eigenvalue form agreement", ac5},
        {"AC6 greedy submodular guarantee", ac6},
        {"AC7 one-shot CapKV vs greedy", ac7},
        {"AC8 proxy monotonicity and first-order bound", ac8},
        {"AC9 capacity-performance correlation", ac9},
        {"AC10 streaming protocol", ac10},
        {"AC11 runtime scaling", ac11},
        {"AC12 tau-sweep protocol", ac12},
        {"AC13 KVPK serialization", ac13},
        {"AC14 CLI determinism", ac14},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << " | " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
