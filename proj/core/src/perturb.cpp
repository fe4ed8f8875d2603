#include "themis/perturb.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace themis {

std::string_view to_string(Family family) {
    switch (family) {
        case Family::gaussian: return "gaussian";
        case Family::fgsm: return "fgsm";
        case Family::pgd: return "pgd";
    }
    return "?";
}

Family parse_family(std::string_view name) {
    if (name == "gaussian") return Family::gaussian;
    if (name == "fgsm") return Family::fgsm;
    if (name == "pgd") return Family::pgd;
    if (name == "cw") throw UnsupportedFamilyError("perturbation family 'cw' is unsupported (use gaussian, fgsm or pgd)");
    throw UnsupportedFamilyError("unknown perturbation family '" + std::string(name) + "'");
}

std::vector<double> magnitude_sweep(Family family) {
    switch (family) {
        case Family::gaussian: return {0.01, 0.02, 0.03, 0.04, 0.05};
        case Family::fgsm:
        case Family::pgd: return {0.1, 0.2, 0.3, 0.4, 0.5};
    }
    return {};
}

MagnitudeRange sweep_range(Family family) {
    const auto s = magnitude_sweep(family);
    return {s.front(), s.back()};
}

MagnitudeRange valid_range(Family family) { return {0.0, sweep_range(family).hi}; }

double linf_budget(Family family, std::optional<double> magnitude) {
    const double theta = magnitude.value_or(sweep_range(family).hi);
    return family == Family::gaussian ? 3.0 * theta : theta;
}

void validate(const PerturbSpec& spec) {
    const auto r = valid_range(spec.family);
    if (!(spec.magnitude >= r.lo && spec.magnitude <= r.hi))
        throw Error(std::string(to_string(spec.family)) + " magnitude " + std::to_string(spec.magnitude) +
                    " outside [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
    if (spec.family == Family::pgd) {
        if (spec.steps == 0) throw Error("pgd steps must be positive");
        if (spec.step_size && !(*spec.step_size > 0.0)) throw Error("pgd alpha must be positive");
    }
}

namespace {

double parse_double(std::string_view s, std::string_view key) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw Error("bad value '" + std::string(s) + "' for " + std::string(key));
    return v;
}

/// Shortest %g form that parses back to the same double.
std::string fmt_double(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

}  // namespace

PerturbSpec parse_perturb_spec(std::string_view text) {
    const auto colon = text.find(':');
    PerturbSpec spec;
    spec.family = parse_family(text.substr(0, colon));
    if (colon == std::string_view::npos) throw Error("perturbation '" + std::string(text) + "' needs a magnitude");
    bool have_mag = false;
    auto rest = text.substr(colon + 1);
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        const auto item = rest.substr(0, comma);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw Error("expected key=value in '" + std::string(item) + "'");
        const auto key = item.substr(0, eq);
        const auto val = item.substr(eq + 1);
        const bool gauss = spec.family == Family::gaussian;
        if ((gauss && key == "sigma") || (!gauss && key == "eps")) {
            spec.magnitude = parse_double(val, key);
            have_mag = true;
        } else if (spec.family == Family::pgd && key == "steps") {
            const double s = parse_double(val, key);
            if (s < 1 || s != std::floor(s)) throw Error("pgd steps must be a positive integer");
            spec.steps = static_cast<std::size_t>(s);
        } else if (spec.family == Family::pgd && key == "alpha") {
            spec.step_size = parse_double(val, key);
        } else {
            throw Error("unknown key '" + std::string(key) + "' for " + std::string(to_string(spec.family)));
        }
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
    }
    if (!have_mag) throw Error("perturbation '" + std::string(text) + "' is missing its magnitude");
    validate(spec);
    return spec;
}

std::string to_string(const PerturbSpec& spec) {
    std::string s(to_string(spec.family));
    s += spec.family == Family::gaussian ? ":sigma=" : ":eps=";
    s += fmt_double(spec.magnitude);
    if (spec.family == Family::pgd) {
        s += ",steps=" + std::to_string(spec.steps);
        s += ",alpha=" + fmt_double(spec.pgd_step());
    }
    return s;
}

void clamp_unit(Tensor& x) {
    for (auto& v : x.values()) v = std::clamp(v, 0.0, 1.0);
}

void project_linf(Tensor& x, const Tensor& center, double radius) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], center[i] - radius, center[i] + radius);
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_unit_input(const Tensor& x) {
    for (auto v : x.values())
        if (!(v >= 0.0 && v <= 1.0)) throw Error("perturb: input values must lie in [0, 1]");
}

}  // namespace

Tensor perturb(const PerturbSpec& spec, const Model& model, const Tensor& input, ClassId label, Rng& rng) {
    validate(spec);
    require_unit_input(input);
    if (spec.family != Family::gaussian && label >= model.num_classes())
        throw Error("perturb: label " + std::to_string(label) + " invalid for " +
                    std::to_string(model.num_classes()) + " classes");
    Tensor x = input;
    switch (spec.family) {
        case Family::gaussian:
            for (auto& v : x.values()) v += spec.magnitude * rng.normal();
            break;
        case Family::fgsm: {
            const auto g = loss_input_gradient(model, input, label).gradient;
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += spec.magnitude * sign(g[i]);
            break;
        }
        case Family::pgd: {
            const double alpha = spec.pgd_step();
            for (std::size_t step = 0; step < spec.steps; ++step) {
                const auto g = loss_input_gradient(model, x, label).gradient;
                for (std::size_t i = 0; i < x.size(); ++i) x[i] += alpha * sign(g[i]);
                project_linf(x, input, spec.magnitude);
                clamp_unit(x);
            }
            break;
        }
    }
    clamp_unit(x);
    return x;
}

}  // namespace themis
