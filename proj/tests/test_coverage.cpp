#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support.hpp"
#include "themis/coverage.hpp"
#include "themis/experiments.hpp"
#include "themis/stats.hpp"

using namespace themis;
using namespace themis::test;

namespace {

// Full sort of (variance, id) pairs plus ceil(j * n / k) computed in floating point.
std::vector<std::size_t> naive_sampler(const std::vector<double>& v, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> sorted;
    for (std::size_t i = 0; i < v.size(); ++i) sorted.emplace_back(v[i], i);
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = v.size();
    if (n <= k) {
        std::vector<std::size_t> all;
        for (auto& p : sorted) all.push_back(p.second);
        return all;
    }
    std::vector<std::size_t> out;
    std::set<std::size_t> used;
    for (std::size_t j = 1; j <= k; ++j) {
        auto pos = static_cast<std::size_t>(std::ceil(static_cast<double>(j) * n / static_cast<double>(k) - 1e-9));
        pos = std::clamp<std::size_t>(pos, 1, n);
        if (used.insert(pos).second) out.push_back(sorted[pos - 1].second);
    }
    return out;
}

std::vector<double> normal_samples(std::size_t n, double mu, double sd, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> xs(n);
    for (auto& x : xs) x = mu + sd * rng.normal();
    return xs;
}

SensitivityStore store_from(const std::vector<std::vector<double>>& per_neuron) {
    SensitivityStore store(per_neuron.size());
    for (std::size_t i = 0; i < per_neuron[0].size(); ++i) {
        std::vector<double> row;
        for (const auto& col : per_neuron) row.push_back(col[i]);
        store.append(row);
    }
    return store;
}

}  // namespace

TEST_SUITE("coverage") {
    TEST_CASE("sampler worked example") {
        const std::vector<double> v{5, 1, 9, 3};
        CHECK(sample_neurons(v, 2) == std::vector<std::size_t>{3, 2});
        CHECK(sample_neurons(v, 4).size() == 4);
        CHECK(sample_neurons(v, 10).size() == 4);
        CHECK(sample_neurons(v, 1) == std::vector<std::size_t>{2});
        CHECK_THROWS(sample_neurons(v, 0));
    }

    TEST_CASE("sampler ties break by neuron id") {
        const std::vector<double> v(6, 1.0);
        CHECK(sample_neurons(v, 3) == std::vector<std::size_t>{1, 3, 5});
        CHECK(sample_neurons(v, 6) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    }

    TEST_CASE("sampler matches a brute-force oracle") {
        Rng rng(42);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t n = trial < 20 ? 10000 : 1 + rng.below(trial % 3 == 0 ? 10000 : 50);
            const std::size_t k = 1 + rng.below(std::max<std::size_t>(n + n / 2, 1));
            std::vector<double> v(n);
            // Coarse values force plenty of ties.
            for (auto& x : v) x = static_cast<double>(rng.below(trial % 2 ? 5 : 1000000));
            const auto got = sample_neurons(v, k);
            REQUIRE(got == naive_sampler(v, k));
            CHECK(got.size() == std::min(k, n));
        }
    }

    TEST_CASE("mcse of a constant chain is zero") {
        CHECK(mcse(std::vector<double>(1000, 3.7)) == 0.0);
        CHECK_THROWS(mcse(std::vector<double>{1, 2, 3}));
    }

    TEST_CASE("mcse of an iid chain is near sigma / sqrt(L)") {
        int within = 0;
        for (std::uint64_t s = 0; s < 50; ++s) {
            const double m = mcse(normal_samples(10000, 0.0, 1.0, 1000 + s));
            within += m > 0.01 / 1.5 && m < 0.01 * 1.5;
        }
        CHECK(within >= 45);
    }

    TEST_CASE("mcse is translation invariant") {
        auto xs = normal_samples(2500, 0.0, 1.0, 8);
        const double a = mcse(xs);
        for (auto& x : xs) x += 100.0;
        CHECK(mcse(xs) == doctest::Approx(a).epsilon(1e-9));
    }

    TEST_CASE("mcse hand example") {
        // L = 9: three batches of three with means 2, 5, 8; sd = 3; 3 / sqrt(3).
        const std::vector<double> xs{1, 2, 3, 4, 5, 6, 7, 8, 9};
        CHECK(mcse(xs) == doctest::Approx(std::sqrt(3.0)));
        // L = 10: remainder dropped.
        const std::vector<double> ys{1, 2, 3, 4, 5, 6, 7, 8, 9, 1000};
        CHECK(mcse(ys) == doctest::Approx(std::sqrt(3.0)));
    }

    TEST_CASE("posterior on constant data") {
        McmcConfig cfg;
        cfg.draws = 4000;
        for (double c : {0.0, 0.3, 2.5}) {
            const auto d = fit_posterior(std::vector<double>(200, c), cfg, 1);
            CHECK(std::abs(d.mean_mu() - c) <= 0.1 * (1.0 + std::abs(c)));
        }
        CHECK_THROWS(fit_posterior(std::vector<double>{1.0}, cfg, 1));
    }

    TEST_CASE("posterior mean of Normal(2, 1) data") {
        const auto xs = normal_samples(5000, 2.0, 1.0, 9);
        const auto d = fit_posterior(xs, McmcConfig{}, 3);
        CHECK(d.mean_mu() >= 1.9);
        CHECK(d.mean_mu() <= 2.1);
        // Flat-prior closed form: mu | x ~ Normal(xbar, s^2 / n).
        const double xbar = mean(xs);
        const double sd = std::sqrt(sample_variance(xs) / 5000.0);
        CHECK(std::abs(d.mean_mu() - xbar) < 3.0 * sd);
        CHECK(d.sd_mu() == doctest::Approx(sd).epsilon(0.25));
        CHECK(d.mu.size() == 2);
        CHECK(d.mu[0].size() == 1000);
        for (double a : d.acceptance) {
            CHECK(a > 0.1);
            CHECK(a < 0.6);
        }
    }

    TEST_CASE("posterior draws are deterministic per seed") {
        const auto xs = normal_samples(300, 0.5, 0.2, 10);
        const auto a = fit_posterior(xs, McmcConfig{}, 5);
        const auto b = fit_posterior(xs, McmcConfig{}, 5);
        const auto c = fit_posterior(xs, McmcConfig{}, 6);
        CHECK(a.mu == b.mu);
        CHECK(a.sigma == b.sigma);
        CHECK(a.mu != c.mu);
    }

    TEST_CASE("six of twelve converged is fifty percent") {
        std::vector<NeuronStats> ns(12);
        for (std::size_t i = 0; i < 12; ++i) {
            ns[i].neuron_id = i;
            ns[i].converged = i % 2 == 0;
        }
        const auto r = summarize(3, ns);
        CHECK(r.coverage == 0.5);
        CHECK(r.converged_count == 6);
        CHECK(r.unconverged_ids() == std::vector<std::size_t>{1, 3, 5, 7, 9, 11});
        for (auto& n : ns) n.converged = false;
        CHECK(summarize(0, ns).coverage == 0.0);
    }

    TEST_CASE("half-convergent store gives fifty percent") {
        std::vector<std::vector<double>> cols;
        for (std::size_t j = 0; j < 12; ++j) {
            auto xs = j < 6 ? normal_samples(60, 1.0, 1e-3, j) : normal_samples(60, 0.0, 50.0, j);
            for (auto& x : xs) x = std::abs(x);
            cols.push_back(xs);
        }
        CoverageConfig cfg;
        cfg.sample_size = 12;
        const auto r = compute_coverage(store_from(cols), cfg, 0);
        CHECK(r.sampled_neuron_ids.size() == 12);
        CHECK(r.coverage == 0.5);
        for (const auto& n : r.neurons) CHECK(n.converged == (n.neuron_id < 6));
    }

    TEST_CASE("Normal(1, 0.01) workload converges everywhere") {
        std::vector<std::vector<double>> cols;
        for (std::size_t j = 0; j < 40; ++j) cols.push_back(normal_samples(5000, 1.0, 0.1, 100 + j));
        const auto r = compute_coverage(store_from(cols), CoverageConfig{}, 0);
        CHECK(r.neurons.size() == 40);
        CHECK(r.coverage == 1.0);
    }

    TEST_CASE("report invariants and unfitted neurons") {
        std::vector<std::vector<double>> cols;
        for (std::size_t j = 0; j < 30; ++j) cols.push_back(normal_samples(20, 1.0, 0.1, j));
        CoverageConfig cfg;
        cfg.sample_size = 10;
        const auto r = compute_coverage(store_from(cols), cfg, 0);
        CHECK(r.neurons.size() == 10);
        CHECK(r.coverage == 0.0);  // 20 < min_fit_samples
        for (const auto& n : r.neurons) {
            CHECK_FALSE(n.mcse.has_value());
            CHECK(n.sample_count == 20);
            CHECK(n.variance >= 0.0);
        }
        CHECK_THROWS(compute_coverage(SensitivityStore(3), cfg, 0));
        cfg.sample_size = 0;
        CHECK_THROWS(compute_coverage(store_from(cols), cfg, 0));
    }

    TEST_CASE("converged iff mcse <= t") {
        std::vector<std::vector<double>> cols;
        for (std::size_t j = 0; j < 20; ++j) cols.push_back(normal_samples(200, 0.0, 0.5 * (j + 1), j));
        for (auto& c : cols)
            for (auto& x : c) x = std::abs(x);
        CoverageConfig cfg;
        cfg.threshold = 0.01;
        const auto r = compute_coverage(store_from(cols), cfg, 4);
        std::size_t conv = 0;
        for (const auto& n : r.neurons) {
            REQUIRE(n.mcse.has_value());
            CHECK(n.converged == (*n.mcse <= 0.01));
            conv += n.converged;
        }
        CHECK(r.coverage == doctest::Approx(static_cast<double>(conv) / r.neurons.size()));
        CHECK(conv > 0);
        CHECK(conv < r.neurons.size());
    }

    TEST_CASE("larger variance converges more slowly") {
        int ok = 0;
        const int trials = 30;
        CoverageConfig cfg;
        cfg.min_fit_samples = 2;
        for (int i = 0; i < trials; ++i) {
            cfg.seed = static_cast<std::uint64_t>(i);
            const auto a = fit_neuron(0, normal_samples(100, 0.0, 1.0, 2 * i), cfg, 0);
            const auto b = fit_neuron(1, normal_samples(100, 0.0, 5.0, 2 * i + 1), cfg, 0);
            ok += *a.mcse <= *b.mcse;
        }
        CHECK(ok >= 27);
    }

    TEST_CASE("more data tightens mcse") {
        CoverageConfig cfg;
        double prev = 1e9;
        for (std::size_t m : {100, 1000, 10000}) {
            std::vector<double> ms;
            for (std::uint64_t s = 0; s < 7; ++s) {
                cfg.seed = s;
                ms.push_back(*fit_neuron(0, normal_samples(m, 1.0, 1.0, 50 + s), cfg, 0).mcse);
            }
            const double med = median(ms);
            CHECK(med <= prev);
            prev = med;
        }
    }

    TEST_CASE("sample-size study subsets agree with direct coverage") {
        std::vector<std::vector<double>> cols;
        Rng rng(77);
        for (std::size_t j = 0; j < 60; ++j) {
            auto xs = normal_samples(80, 0.0, rng.uniform(0.01, 2.0), 300 + j);
            for (auto& x : xs) x = std::abs(x);
            cols.push_back(xs);
        }
        const auto store = store_from(cols);
        CoverageConfig cfg;
        cfg.threshold = 0.01;
        const std::vector<std::size_t> ks{5, 20, 60};
        const std::vector<std::uint64_t> seeds{1, 2};
        const auto study = sample_size_study(store, ks, cfg, seeds);
        REQUIRE(study.rows.size() == 3);
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            for (const auto& row : study.rows) {
                auto c = cfg;
                c.sample_size = row.k;
                c.seed = seeds[si];
                CHECK(row.coverage[si] == compute_coverage(store, c, 0).coverage);
            }
            CHECK(study.rows[2].abs_error[si] == 0.0);
        }
        const std::vector<double> ts{0.0, 0.01, 1e9};
        const auto th = threshold_study(store, ts, cfg, seeds);
        CHECK(th[0].median_coverage == 0.0);
        CHECK(th[1].median_coverage == study.median_ground_truth);
        CHECK(th[2].median_coverage == 1.0);
    }
}
