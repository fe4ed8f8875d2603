#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "themis/engine.hpp"
#include "themis/rng.hpp"

namespace themis {

enum class Family { gaussian, fgsm, pgd };

class UnsupportedFamilyError : public Error {
public:
    using Error::Error;
};

std::string_view to_string(Family family);
/// Throws UnsupportedFamilyError for "cw" and any unknown name.
Family parse_family(std::string_view name);

/// Noise E(theta). `magnitude` is sigma for gaussian and epsilon for fgsm/pgd.
struct PerturbSpec {
    Family family = Family::gaussian;
    double magnitude = 0.0;
    std::size_t steps = 10;             // pgd only
    std::optional<double> step_size;    // pgd only; defaults to magnitude / 4

    double pgd_step() const { return step_size.value_or(magnitude / 4.0); }

    friend bool operator==(const PerturbSpec&, const PerturbSpec&) = default;
};

struct MagnitudeRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Magnitudes swept in the evaluation: five per family.
std::vector<double> magnitude_sweep(Family family);
/// [first, last] of the sweep; random magnitudes are drawn from here.
MagnitudeRange sweep_range(Family family);
/// Accepted magnitudes: [0, last sweep value].
MagnitudeRange valid_range(Family family);

/// L-infinity radius generated inputs are kept within: epsilon for fgsm/pgd,
/// three sigma for gaussian. `magnitude` defaults to the top of the sweep.
double linf_budget(Family family, std::optional<double> magnitude = std::nullopt);

/// Throws Error if the magnitude or pgd settings are out of range.
void validate(const PerturbSpec& spec);

/// Parses `gaussian:sigma=0.03`, `fgsm:eps=0.2`, `pgd:eps=0.2,steps=10,alpha=0.05`.
PerturbSpec parse_perturb_spec(std::string_view text);
/// Canonical text form accepted by parse_perturb_spec.
std::string to_string(const PerturbSpec& spec);

/// Returns I + E(theta), clamped to [0, 1]. Gaussian draws from `rng`; fgsm and
/// pgd use the cross-entropy gradient at `label` and ignore `rng`.
Tensor perturb(const PerturbSpec& spec, const Model& model, const Tensor& input, ClassId label, Rng& rng);

/// Elementwise clamp to [0, 1].
void clamp_unit(Tensor& x);
/// Projects x onto the L-infinity ball of `radius` around `center`.
void project_linf(Tensor& x, const Tensor& center, double radius);

}  // namespace themis
