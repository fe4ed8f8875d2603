#include <doctest.h>

#include <numeric>

#include "support.hpp"
#include "themis/fuzzer.hpp"

using namespace themis;
using namespace themis::test;

namespace {

std::vector<std::size_t> all_neurons(const Model& m) {
    std::vector<std::size_t> ids(m.num_neurons());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

// Two dense layers and a smooth objective away from |.| kinks.
Model linear_toy(std::uint64_t seed) {
    Rng rng(seed);
    return Model("toy", {5}, {dense_layer(random_tensor({4, 5}, rng), random_tensor({4}, rng)),
                             dense_layer(random_tensor({3, 4}, rng), random_tensor({3}, rng))});
}

struct Reference {
    DataSplits splits;
    Dataset pool;
    Model model;
};

const Reference& reference() {
    static const Reference r = [] {
        auto s = mnist_splits();
        Reference out{s, s.pool.reshaped({784}), Model{}};
        out.model = reference_mlp(s.train.reshaped({784}));
        return out;
    }();
    return r;
}

}  // namespace

TEST_SUITE("fuzzer") {
    TEST_CASE("objective hand examples") {
        const auto m = identity_dense(2);
        const auto clean = Tensor::vector({1, 2});
        const std::vector<std::size_t> both{0, 1}, first{0};
        CHECK(objective(m, clean, Tensor::vector({1.5, 1}), both) == doctest::Approx(1.5));
        CHECK(objective(m, clean, Tensor::vector({1.5, 1}), first) == doctest::Approx(0.5));
        CHECK(objective(m, clean, clean, both) == 0.0);
        CHECK_THROWS(objective(m, clean, clean, std::vector<std::size_t>{}));
        CHECK_THROWS(objective(m, clean, clean, std::vector<std::size_t>{2}));
    }

    TEST_CASE("objective over all neurons bounds any subset") {
        const Model m = make_mlp({8, 6, 4}, 3);
        Rng rng(4);
        const auto all = all_neurons(m);
        for (int i = 0; i < 100; ++i) {
            const auto a = random_tensor({8}, rng, 0, 1), b = random_tensor({8}, rng, 0, 1);
            std::vector<std::size_t> sub;
            for (auto id : all)
                if (rng.uniform() < 0.5) sub.push_back(id);
            if (sub.empty()) sub.push_back(0);
            CHECK(objective(m, a, b, all) >= objective(m, a, b, sub));
        }
    }

    TEST_CASE("objective gradient matches finite differences") {
        Rng rng(5);
        int checked = 0;
        for (int trial = 0; trial < 150; ++trial) {
            const Model m = make_mlp({6, 5, 4}, 200 + trial);
            const auto clean = random_tensor({6}, rng, 0, 1);
            const auto cand = random_tensor({6}, rng, 0, 1);
            if (kink_margin(m, cand) < 1e-3) continue;
            const auto ct = forward(m, clean);
            std::vector<std::size_t> ids;
            bool near_zero = false;  // exact zeros are dead relus on both sides
            const auto t = forward(m, cand);
            for (std::size_t j = 0; j < m.num_neurons(); ++j) {
                if (rng.uniform() < 0.6) ids.push_back(j);
                const double diff = std::abs(t.values[j] - ct.values[j]);
                near_zero |= diff > 0.0 && diff < 1e-3;
            }
            if (ids.empty() || near_zero) continue;
            const auto vg = objective_gradient(m, ct, cand, ids);
            CHECK(vg.value == doctest::Approx(objective(m, ct, cand, ids)));
            const auto fd = fd_gradient([&](const Tensor& y) { return objective(m, ct, y, ids); }, cand);
            CHECK(relative_error(vg.gradient.values(), fd.values()) < 1e-4);
            ++checked;
        }
        CHECK(checked >= 100);
    }

    TEST_CASE("ascent keeps the best iterate and stays in budget") {
        const Model m = make_mlp({10, 8, 4}, 6);
        Rng rng(7);
        for (int i = 0; i < 10000; ++i) {
            const auto clean = random_tensor({10}, rng, 0, 1);
            const double budget = rng.uniform(0.0, 0.5);
            Tensor seed = clean;
            for (auto& v : seed.values()) v += rng.uniform(-budget, budget);
            clamp_unit(seed);
            const std::vector<std::size_t> ids{rng.below(m.num_neurons())};
            const AscentConfig cfg{3, rng.uniform(0.001, 0.5), budget};
            const auto r = maximize(m, clean, seed, ids, cfg);
            CHECK(r.objective >= r.seed_objective);
            CHECK(max_abs_diff(r.candidate, clean) <= budget + 1e-12);
            for (double v : r.candidate.values()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            CHECK(r.objective == doctest::Approx(objective(m, clean, r.candidate, ids)));
        }
    }

    TEST_CASE("one small step increases a smooth objective") {
        Rng rng(8);
        for (int i = 0; i < 50; ++i) {
            const Model m = linear_toy(300 + i);
            const auto clean = random_tensor({5}, rng, 0.3, 0.7);
            auto seed = clean;
            for (auto& v : seed.values()) v += rng.uniform(-0.05, 0.05);
            const auto ids = all_neurons(m);
            const auto r = maximize(m, clean, seed, ids, AscentConfig{1, 1e-4, 0.5});
            CHECK(r.objective > r.seed_objective);
        }
    }

    TEST_CASE("budget follows the family") {
        FuzzConfig cfg;
        CHECK(perturbation_budget(Family::gaussian, cfg) == doctest::Approx(0.15));
        CHECK(perturbation_budget(Family::fgsm, cfg) == 0.5);
        cfg.magnitude = 0.02;
        CHECK(perturbation_budget(Family::gaussian, cfg) == doctest::Approx(0.06));
    }

    TEST_CASE("seed candidates cycle the dataset and respect the budget") {
        const Model m = make_mlp({6, 4, 3}, 1);
        Dataset d;
        d.num_classes = 3;
        Rng rng(9);
        for (int i = 0; i < 7; ++i) {
            d.inputs.push_back(random_tensor({6}, rng, 0, 1));
            d.labels.push_back(static_cast<ClassId>(i % 3));
        }
        FuzzConfig cfg;
        cfg.batch_size = 5;
        const auto b1 = seed_candidates(m, d, Family::gaussian, cfg, 1);
        CHECK(b1.size() == 5);
        const std::vector<std::size_t> ids{5, 6, 0, 1, 2};
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(b1[i].input_id == ids[i]);
            CHECK(b1[i].clean == d.inputs[ids[i]]);
            CHECK(max_abs_diff(b1[i].perturbed, b1[i].clean) <= 0.15 + 1e-12);
            CHECK(b1[i].spec.magnitude >= 0.01);
            CHECK(b1[i].spec.magnitude <= 0.05);
        }
        const auto again = seed_candidates(m, d, Family::gaussian, cfg, 1);
        CHECK(again[3].perturbed == b1[3].perturbed);
    }

    TEST_CASE("vacuous target stops after the first coverage computation") {
        const Model m = make_mlp({6, 4, 3}, 1);
        Dataset d;
        d.num_classes = 3;
        Rng rng(10);
        for (int i = 0; i < 40; ++i) {
            d.inputs.push_back(random_tensor({6}, rng, 0, 1));
            d.labels.push_back(0);
        }
        FuzzConfig cfg;
        cfg.coverage_target = 0.0;
        cfg.batch_size = 40;
        const auto r = run_campaign(m, d, Family::fgsm, cfg);
        CHECK(r.iterations.size() == 1);
        CHECK(r.termination == Termination::coverage_reached);
        CHECK(r.inputs_generated == 40);
        cfg.batch_size = 0;
        CHECK_THROWS(run_campaign(m, d, Family::fgsm, cfg));
        cfg.batch_size = 10;
        CHECK_THROWS(run_campaign(m, Dataset{}, Family::fgsm, cfg));
    }

    TEST_CASE("campaign invariants with ascent iterations") {
        const Model m = make_mlp({6, 4, 3}, 2);
        Dataset d;
        d.num_classes = 3;
        Rng rng(11);
        for (int i = 0; i < 50; ++i) {
            d.inputs.push_back(random_tensor({6}, rng, 0, 1));
            d.labels.push_back(static_cast<ClassId>(i % 3));
        }
        FuzzConfig cfg;
        cfg.batch_size = 40;
        cfg.max_outer_iterations = 4;
        cfg.coverage.threshold = 0.0;  // never converges, so every iteration ascends
        cfg.seed = 3;
        std::size_t callbacks = 0;
        const auto r = run_campaign(m, d, Family::gaussian, cfg, [&](const CampaignResult& so_far) {
            ++callbacks;
            CHECK(so_far.iterations.size() == callbacks);
        });
        CHECK(callbacks == 4);
        CHECK(r.termination == Termination::budget_exhausted);
        std::size_t inputs = 0, faults = 0;
        for (const auto& it : r.iterations) {
            inputs += it.inputs;
            faults += it.new_faults;
        }
        CHECK(r.inputs_generated == inputs);
        CHECK(r.faults.size() == faults);
        CHECK(r.faults.size() <= r.inputs_generated);
        for (const auto& f : r.faults) {
            CHECK(max_abs_diff(f.perturbed_input, d.inputs[f.input_id]) <= 0.15 + 1e-12);
            CHECK(argmax(forward(m, f.perturbed_input).output.values()) == f.perturbed_prediction);
        }

        const auto again = run_campaign(m, d, Family::gaussian, cfg);
        REQUIRE(again.faults.size() == r.faults.size());
        for (std::size_t i = 0; i < r.faults.size(); ++i) CHECK(again.faults[i].perturbed_input == r.faults[i].perturbed_input);
        for (std::size_t i = 0; i < r.iterations.size(); ++i) {
            CHECK(again.iterations[i].total_sensitivity == r.iterations[i].total_sensitivity);
            CHECK(again.iterations[i].coverage.sampled_neuron_ids == r.iterations[i].coverage.sampled_neuron_ids);
        }
    }

    TEST_CASE("frozen neuron set is reused across iterations") {
        const Model m = make_mlp({6, 8, 3}, 2);
        Dataset d;
        d.num_classes = 3;
        Rng rng(12);
        for (int i = 0; i < 50; ++i) {
            d.inputs.push_back(random_tensor({6}, rng, 0, 1));
            d.labels.push_back(0);
        }
        FuzzConfig cfg;
        cfg.batch_size = 40;
        cfg.max_outer_iterations = 3;
        cfg.coverage.threshold = 0.0;
        cfg.coverage.sample_size = 4;
        cfg.freeze_sampled_neurons = true;
        const auto r = run_campaign(m, d, Family::gaussian, cfg);
        for (const auto& it : r.iterations)
            CHECK(it.coverage.sampled_neuron_ids == r.iterations[0].coverage.sampled_neuron_ids);
    }

    TEST_CASE("reference MLP campaign with defaults finds faults that replay") {
        const auto& ref = reference();
        FuzzConfig cfg;
        cfg.seed = 1;
        const auto r = run_campaign(ref.model, ref.pool, Family::gaussian, cfg);
        CHECK(r.iterations.size() <= cfg.max_outer_iterations);
        CHECK(r.faults.size() >= 1);
        for (const auto& f : r.faults) {
            const auto clean = argmax(forward(ref.model, ref.pool.inputs[f.input_id]).output.values());
            const auto pert = argmax(forward(ref.model, f.perturbed_input).output.values());
            CHECK(clean == f.clean_prediction);
            CHECK(pert == f.perturbed_prediction);
            CHECK(clean != pert);
        }
    }
}
