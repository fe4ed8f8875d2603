#include "themis/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "themis/parallel.hpp"
#include "themis/serialize.hpp"

namespace themis {

std::string_view to_string(MetricKind kind) { return kind == MetricKind::nc ? "nc" : "kmnc"; }

MetricKind parse_metric(std::string_view name) {
    if (name == "nc") return MetricKind::nc;
    if (name == "kmnc") return MetricKind::kmnc;
    throw Error("unknown coverage metric '" + std::string(name) + "' (expected nc or kmnc)");
}

std::string_view to_string(BaselineTermination t) {
    switch (t) {
        case BaselineTermination::coverage_reached: return "coverage_reached";
        case BaselineTermination::budget_exhausted: return "budget_exhausted";
        case BaselineTermination::saturated: return "saturated";
    }
    return "?";
}

void KmncProfile::validate() const {
    if (k == 0) throw Error("kmnc profile: k must be >= 1");
    if (low.size() != high.size()) throw Error("kmnc profile: bound vectors differ in length");
    for (std::size_t i = 0; i < low.size(); ++i)
        if (!(low[i] <= high[i])) throw Error("kmnc profile: low > high at neuron " + std::to_string(i));
}

KmncProfile build_kmnc_profile(const Model& model, std::span<const Tensor> inputs, std::size_t k) {
    if (inputs.empty()) throw Error("kmnc profile: no inputs");
    std::vector<ActivationTrace> traces(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) { traces[i] = forward(model, inputs[i]); });
    KmncProfile p;
    p.k = k;
    p.low = p.high = traces.front().values;
    for (const auto& t : traces)
        for (std::size_t j = 0; j < t.values.size(); ++j) {
            p.low[j] = std::min(p.low[j], t.values[j]);
            p.high[j] = std::max(p.high[j], t.values[j]);
        }
    p.validate();
    return p;
}

std::optional<std::size_t> kmnc_section(double a, double low, double high, std::size_t k) {
    if (a < low || a > high) return std::nullopt;
    if (high == low) return std::size_t{0};
    const double s = std::floor(static_cast<double>(k) * (a - low) / (high - low));
    return std::min(static_cast<std::size_t>(s), k - 1);
}

BaselineState make_nc_state(std::size_t num_neurons) {
    BaselineState s;
    s.kind = MetricKind::nc;
    s.covered.assign(num_neurons, 0);
    return s;
}

BaselineState make_kmnc_state(const KmncProfile& profile) {
    profile.validate();
    BaselineState s;
    s.kind = MetricKind::kmnc;
    s.covered.assign(profile.num_neurons() * profile.k, 0);
    return s;
}

std::size_t nc_update(BaselineState& state, const Model& model, const ActivationTrace& trace, double threshold) {
    if (state.kind != MetricKind::nc) throw Error("nc_update: state is not an NC state");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("nc_update: threshold must be in [0, 1]");
    if (trace.values.size() != state.covered.size() || trace.values.size() != model.num_neurons())
        throw Error("nc_update: trace length does not match the model");
    std::size_t fresh = 0;
    for (const auto& slot : model.trace_layout()) {
        const auto first = trace.values.begin() + static_cast<std::ptrdiff_t>(slot.offset);
        const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(slot.size));
        const double a = *lo, range = *hi - *lo;
        for (std::size_t j = slot.offset; j < slot.offset + slot.size; ++j) {
            const double norm = range > 0.0 ? (trace.values[j] - a) / range : 0.0;
            if (norm > threshold && !state.covered[j]) {
                state.covered[j] = 1;
                ++fresh;
            }
        }
    }
    state.covered_count += fresh;
    return fresh;
}

std::size_t kmnc_update(BaselineState& state, const ActivationTrace& trace, const KmncProfile& profile) {
    if (state.kind != MetricKind::kmnc) throw Error("kmnc_update: state is not a KMNC state");
    if (trace.values.size() != profile.num_neurons())
        throw Error("kmnc_update: profile has " + std::to_string(profile.num_neurons()) + " neurons, trace has " +
                    std::to_string(trace.values.size()));
    if (state.covered.size() != profile.num_neurons() * profile.k)
        throw Error("kmnc_update: state does not match the profile");
    std::size_t fresh = 0;
    for (std::size_t j = 0; j < trace.values.size(); ++j) {
        const auto s = kmnc_section(trace.values[j], profile.low[j], profile.high[j], profile.k);
        if (!s) continue;
        auto& cell = state.covered[j * profile.k + *s];
        if (!cell) {
            cell = 1;
            ++fresh;
        }
    }
    state.covered_count += fresh;
    return fresh;
}

void BaselineConfig::validate() const {
    if (!(nc_threshold >= 0.0 && nc_threshold <= 1.0)) throw Error("baseline: NC threshold must be in [0, 1]");
    if (kmnc_k == 0) throw Error("baseline: k must be >= 1");
    if (attempt_budget == 0) throw Error("baseline: attempt budget must be positive");
    if (patience == 0) throw Error("baseline: patience must be positive");
}

namespace {

struct Attempt {
    Candidate candidate;
    ActivationTrace trace;
    ClassId clean_prediction = 0;
    ClassId perturbed_prediction = 0;
};

constexpr std::size_t kChunk = 64;

}  // namespace

BaselineResult baseline_campaign(const Model& model, const Dataset& dataset, Family family, const BaselineConfig& cfg,
                                 const KmncProfile* profile) {
    cfg.validate();
    if (dataset.empty()) throw Error("baseline_campaign: empty dataset");
    dataset.validate();
    if (cfg.metric == MetricKind::kmnc && !profile) throw Error("baseline_campaign: KMNC needs a profile");
    if (cfg.magnitude) validate(PerturbSpec{family, *cfg.magnitude, cfg.pgd_steps, cfg.pgd_alpha});
    const auto t_start = std::chrono::steady_clock::now();

    BaselineResult result;
    result.config = cfg;
    result.family = family;
    result.model_fingerprint = model_fingerprint(model);
    result.num_neurons = model.num_neurons();
    BaselineState state = cfg.metric == MetricKind::nc ? make_nc_state(model.num_neurons()) : make_kmnc_state(*profile);

    const auto range = sweep_range(family);
    const double budget = linf_budget(family, cfg.magnitude);
    const std::size_t n = dataset.size();
    std::size_t idle = 0;
    bool done = false;

    for (std::size_t base = 0; base < cfg.attempt_budget && !done; base += kChunk) {
        const std::size_t count = std::min(kChunk, cfg.attempt_budget - base);
        std::vector<Attempt> chunk(count);
        parallel_for(count, [&](std::size_t c) {
            const std::size_t attempt = base + c, idx = attempt % n;
            Rng rng(derive_seed(cfg.seed, {0x62617365, attempt}));
            PerturbSpec spec{family, cfg.magnitude ? *cfg.magnitude : rng.uniform(range.lo, range.hi), cfg.pgd_steps,
                             cfg.pgd_alpha};
            Tensor x = perturb(spec, model, dataset.inputs[idx], dataset.labels[idx], rng);
            project_linf(x, dataset.inputs[idx], budget);
            clamp_unit(x);
            auto& a = chunk[c];
            a.trace = forward(model, x);
            a.perturbed_prediction = argmax(a.trace.output.values());
            a.clean_prediction = predict(model, dataset.inputs[idx]);
            a.candidate = Candidate{idx, dataset.labels[idx], dataset.inputs[idx], std::move(x), spec};
        });

        for (std::size_t c = 0; c < count; ++c) {
            if (state.covered_count == state.covered.size()) {
                result.termination = BaselineTermination::coverage_reached;
                done = true;
                break;
            }
            if (idle >= cfg.patience) {
                result.termination = BaselineTermination::saturated;
                done = true;
                break;
            }
            auto& a = chunk[c];
            ++result.attempts;
            const std::size_t fresh = cfg.metric == MetricKind::nc ? nc_update(state, model, a.trace, cfg.nc_threshold)
                                                                   : kmnc_update(state, a.trace, *profile);
            if (fresh == 0) {
                ++idle;
                continue;
            }
            idle = 0;
            ++state.inputs_accepted;
            result.accepted.push_back({base + c, a.candidate.input_id, a.candidate.spec, state.coverage()});
            if (a.clean_prediction != a.perturbed_prediction) {
                ++state.faults_found;
                result.faults.push_back(FaultRecord{a.candidate.input_id, a.candidate.spec, a.clean_prediction,
                                                    a.perturbed_prediction, base + c, a.candidate.label,
                                                    std::move(a.candidate.perturbed)});
            }
        }
    }
    if (!done) {
        if (state.covered_count == state.covered.size())
            result.termination = BaselineTermination::coverage_reached;
        else if (idle >= cfg.patience)
            result.termination = BaselineTermination::saturated;
        else
            result.termination = BaselineTermination::budget_exhausted;
    }
    result.final_coverage = state.coverage();
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

}  // namespace themis
