#include "themis/campaign_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include <nlohmann/json.hpp>

#include "themis/serialize.hpp"
#include "themis/version.hpp"

namespace themis {

using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_double(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

json to_json(const McmcConfig& c) {
    return {{"chains", c.chains},
            {"draws", c.draws},
            {"warmup", c.warmup},
            {"target_acceptance", c.target_acceptance},
            {"prior_mu_sd", c.prior_mu_sd},
            {"prior_sigma_scale", c.prior_sigma_scale}};
}

McmcConfig mcmc_from_json(const json& j) {
    McmcConfig c;
    c.chains = j.at("chains");
    c.draws = j.at("draws");
    c.warmup = j.at("warmup");
    c.target_acceptance = j.at("target_acceptance");
    c.prior_mu_sd = j.at("prior_mu_sd");
    c.prior_sigma_scale = j.at("prior_sigma_scale");
    return c;
}

json to_json(const CoverageConfig& c) {
    return {{"sample_size", c.sample_size},
            {"threshold", c.threshold},
            {"min_fit_samples", c.min_fit_samples},
            {"seed", c.seed},
            {"mcmc", to_json(c.mcmc)}};
}

CoverageConfig coverage_from_json(const json& j) {
    CoverageConfig c;
    c.sample_size = j.at("sample_size");
    c.threshold = j.at("threshold");
    c.min_fit_samples = j.at("min_fit_samples");
    c.seed = j.at("seed");
    c.mcmc = mcmc_from_json(j.at("mcmc"));
    return c;
}

json to_json(const FuzzConfig& c) {
    return {{"coverage_target", c.coverage_target},
            {"max_outer_iterations", c.max_outer_iterations},
            {"inner_steps", c.inner_steps},
            {"step_size", c.step_size},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"magnitude", opt(c.magnitude)},
            {"pgd_steps", c.pgd_steps},
            {"pgd_alpha", opt(c.pgd_alpha)},
            {"freeze_sampled_neurons", c.freeze_sampled_neurons},
            {"coverage", to_json(c.coverage)}};
}

FuzzConfig fuzz_from_json(const json& j) {
    FuzzConfig c;
    c.coverage_target = j.at("coverage_target");
    c.max_outer_iterations = j.at("max_outer_iterations");
    c.inner_steps = j.at("inner_steps");
    c.step_size = j.at("step_size");
    c.batch_size = j.at("batch_size");
    c.seed = j.at("seed");
    c.magnitude = opt_double(j.at("magnitude"));
    c.pgd_steps = j.at("pgd_steps");
    c.pgd_alpha = opt_double(j.at("pgd_alpha"));
    c.freeze_sampled_neurons = j.at("freeze_sampled_neurons");
    c.coverage = coverage_from_json(j.at("coverage"));
    return c;
}

json to_json(const NeuronStats& n) {
    return {{"neuron_id", n.neuron_id},
            {"sample_count", n.sample_count},
            {"variance", n.variance},
            {"posterior_mean_mu", opt(n.posterior_mean_mu)},
            {"posterior_sd_mu", opt(n.posterior_sd_mu)},
            {"mcse", opt(n.mcse)},
            {"converged", n.converged}};
}

NeuronStats neuron_from_json(const json& j) {
    NeuronStats n;
    n.neuron_id = j.at("neuron_id");
    n.sample_count = j.at("sample_count");
    n.variance = j.at("variance");
    n.posterior_mean_mu = opt_double(j.at("posterior_mean_mu"));
    n.posterior_sd_mu = opt_double(j.at("posterior_sd_mu"));
    n.mcse = opt_double(j.at("mcse"));
    n.converged = j.at("converged");
    return n;
}

json to_json(const CoverageReport& r) {
    json neurons = json::array();
    for (const auto& n : r.neurons) neurons.push_back(to_json(n));
    return {{"iteration", r.iteration},
            {"sampled_neuron_ids", r.sampled_neuron_ids},
            {"converged_count", r.converged_count},
            {"coverage", r.coverage},
            {"neurons", std::move(neurons)}};
}

CoverageReport coverage_from_json(const json& j, int) {
    CoverageReport r;
    r.iteration = j.at("iteration");
    r.sampled_neuron_ids = j.at("sampled_neuron_ids").get<std::vector<std::size_t>>();
    r.converged_count = j.at("converged_count");
    r.coverage = j.at("coverage");
    for (const auto& n : j.at("neurons")) r.neurons.push_back(neuron_from_json(n));
    return r;
}

json fault_meta(const FaultRecord& f) {
    return {{"input_id", f.input_id},
            {"spec", to_string(f.spec)},
            {"clean_prediction", f.clean_prediction},
            {"perturbed_prediction", f.perturbed_prediction},
            {"iteration", f.iteration},
            {"label", f.label}};
}

json faults_meta(const std::vector<FaultRecord>& faults) {
    json a = json::array();
    for (const auto& f : faults) a.push_back(fault_meta(f));
    return a;
}

void write_with_faults(const std::string& doc, const std::vector<FaultRecord>& faults,
                       const std::filesystem::path& json_path) {
    std::vector<Tensor> inputs;
    inputs.reserve(faults.size());
    for (const auto& f : faults) inputs.push_back(f.perturbed_input);
    save_tensors(inputs, faults_blob_path(json_path));
    write_file(json_path, doc);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Shortest text that parses back to the same double.
std::string num(double v) {
    char buf[32];
    for (int p = 1; p <= 17; ++p) {
        std::snprintf(buf, sizeof buf, "%.*g", p, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::filesystem::path faults_blob_path(const std::filesystem::path& json_path) {
    auto p = json_path;
    p.replace_extension(".faults.thm");
    return p;
}

std::string campaign_json(const CampaignResult& r, const std::string& faults_blob_name) {
    json iterations = json::array();
    for (const auto& it : r.iterations)
        iterations.push_back({{"iteration", it.iteration},
                              {"inputs", it.inputs},
                              {"new_faults", it.new_faults},
                              {"total_sensitivity", it.total_sensitivity},
                              {"coverage", to_json(it.coverage)}});
    const json doc = {{"format", "themis-campaign"},
                      {"version", std::string(version())},
                      {"family", std::string(to_string(r.family))},
                      {"model_fingerprint", r.model_fingerprint},
                      {"num_neurons", r.num_neurons},
                      {"config", to_json(r.config)},
                      {"iterations", std::move(iterations)},
                      {"inputs_generated", r.inputs_generated},
                      {"fault_count", r.faults.size()},
                      {"faults", faults_meta(r.faults)},
                      {"faults_blob", faults_blob_name},
                      {"final_coverage", r.final_coverage()},
                      {"termination", std::string(to_string(r.termination))}};
    return dump(doc);
}

CampaignResult parse_campaign_json(const std::string& text, std::vector<Tensor> fault_inputs) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("campaign JSON: ") + e.what());
    }
    try {
        if (j.at("format") != "themis-campaign") throw FormatError("campaign JSON: not a themis campaign");
        CampaignResult r;
        r.family = parse_family(j.at("family").get<std::string>());
        r.model_fingerprint = j.at("model_fingerprint");
        r.num_neurons = j.at("num_neurons");
        r.config = fuzz_from_json(j.at("config"));
        for (const auto& it : j.at("iterations")) {
            IterationRecord rec;
            rec.iteration = it.at("iteration");
            rec.inputs = it.at("inputs");
            rec.new_faults = it.at("new_faults");
            rec.total_sensitivity = it.at("total_sensitivity");
            rec.coverage = coverage_from_json(it.at("coverage"), 0);
            r.iterations.push_back(std::move(rec));
        }
        r.inputs_generated = j.at("inputs_generated");
        const auto& faults = j.at("faults");
        if (faults.size() != fault_inputs.size())
            throw FormatError("campaign JSON lists " + std::to_string(faults.size()) + " faults, blob holds " +
                              std::to_string(fault_inputs.size()));
        for (std::size_t i = 0; i < faults.size(); ++i) {
            const auto& f = faults[i];
            r.faults.push_back(FaultRecord{f.at("input_id"), parse_perturb_spec(f.at("spec").get<std::string>()),
                                           f.at("clean_prediction"), f.at("perturbed_prediction"), f.at("iteration"),
                                           f.at("label"), std::move(fault_inputs[i])});
        }
        const auto term = j.at("termination").get<std::string>();
        r.termination = term == "coverage_reached" ? Termination::coverage_reached : Termination::budget_exhausted;
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("campaign JSON: ") + e.what());
    }
}

void write_campaign(const CampaignResult& result, const std::filesystem::path& json_path) {
    write_with_faults(campaign_json(result, faults_blob_path(json_path).filename().string()), result.faults,
                      json_path);
}

CampaignResult read_campaign(const std::filesystem::path& json_path) {
    const std::string text = read_file(json_path);
    std::string blob_name;
    try {
        blob_name = json::parse(text).at("faults_blob").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("campaign JSON: ") + e.what());
    }
    return parse_campaign_json(text, load_tensors(json_path.parent_path() / blob_name));
}

std::string campaign_iterations_csv(const CampaignResult& r) {
    std::ostringstream out;
    out << "iteration,inputs,new_faults,total_faults,total_sensitivity,sampled,converged,coverage\n";
    std::size_t total = 0;
    for (const auto& it : r.iterations) {
        total += it.new_faults;
        out << it.iteration << ',' << it.inputs << ',' << it.new_faults << ',' << total << ','
            << num(it.total_sensitivity) << ',' << it.coverage.sampled_neuron_ids.size() << ','
            << it.coverage.converged_count << ',' << num(it.coverage.coverage) << '\n';
    }
    return out.str();
}

std::string faults_csv(const std::vector<FaultRecord>& faults) {
    std::ostringstream out;
    out << "input_id,iteration,label,clean_prediction,perturbed_prediction,spec\n";
    for (const auto& f : faults)
        out << f.input_id << ',' << f.iteration << ',' << f.label << ',' << f.clean_prediction << ','
            << f.perturbed_prediction << ',' << csv_field(to_string(f.spec)) << '\n';
    return out.str();
}

std::string coverage_csv(const CoverageReport& report) {
    std::ostringstream out;
    out << "neuron_id,sample_count,variance,posterior_mean_mu,posterior_sd_mu,mcse,converged\n";
    auto o = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
    for (const auto& n : report.neurons)
        out << n.neuron_id << ',' << n.sample_count << ',' << num(n.variance) << ',' << o(n.posterior_mean_mu) << ','
            << o(n.posterior_sd_mu) << ',' << o(n.mcse) << ',' << (n.converged ? 1 : 0) << '\n';
    return out.str();
}

std::string timings_json(const PhaseTimings& t) {
    return dump({{"calculator_seconds", t.calculator},
                 {"coverage_seconds", t.coverage},
                 {"fuzzer_seconds", t.fuzzer},
                 {"total_seconds", t.total}});
}

std::string baseline_json(const BaselineResult& r, const std::string& faults_blob_name) {
    json accepted = json::array();
    for (const auto& a : r.accepted)
        accepted.push_back(
            {{"attempt", a.attempt}, {"input_id", a.input_id}, {"spec", to_string(a.spec)}, {"coverage", a.coverage}});
    const auto& c = r.config;
    const json doc = {{"format", "themis-baseline"},
                      {"version", std::string(version())},
                      {"metric", std::string(to_string(c.metric))},
                      {"family", std::string(to_string(r.family))},
                      {"model_fingerprint", r.model_fingerprint},
                      {"num_neurons", r.num_neurons},
                      {"config",
                       {{"metric", std::string(to_string(c.metric))},
                        {"nc_threshold", c.nc_threshold},
                        {"kmnc_k", c.kmnc_k},
                        {"attempt_budget", c.attempt_budget},
                        {"patience", c.patience},
                        {"seed", c.seed},
                        {"magnitude", opt(c.magnitude)},
                        {"pgd_steps", c.pgd_steps},
                        {"pgd_alpha", opt(c.pgd_alpha)}}},
                      {"attempts", r.attempts},
                      {"inputs_accepted", r.accepted.size()},
                      {"accepted", std::move(accepted)},
                      {"fault_count", r.faults.size()},
                      {"faults", faults_meta(r.faults)},
                      {"faults_blob", faults_blob_name},
                      {"final_coverage", r.final_coverage},
                      {"termination", std::string(to_string(r.termination))}};
    return dump(doc);
}

void write_baseline(const BaselineResult& result, const std::filesystem::path& json_path) {
    write_with_faults(baseline_json(result, faults_blob_path(json_path).filename().string()), result.faults,
                      json_path);
}

std::string baseline_csv(const BaselineResult& r) {
    std::ostringstream out;
    out << "attempt,input_id,spec,coverage\n";
    for (const auto& a : r.accepted)
        out << a.attempt << ',' << a.input_id << ',' << csv_field(to_string(a.spec)) << ',' << num(a.coverage) << '\n';
    return out.str();
}

std::string experiment_json(const ExperimentReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"magnitude", row.magnitude},
                        {"error_rate", row.error_rate},
                        {"faults", row.faults},
                        {"inputs", row.inputs},
                        {"iterations", row.iterations},
                        {"final_coverage", row.final_coverage},
                        {"termination", std::string(to_string(row.termination))}});
    const json doc = {{"format", "themis-correlation"},
                      {"version", std::string(version())},
                      {"family", std::string(to_string(r.family))},
                      {"model_fingerprint", r.model_fingerprint},
                      {"config", to_json(r.config)},
                      {"rows", std::move(rows)},
                      {"pearson", opt(r.correlation)},
                      {"pearson_error", r.correlation_error}};
    return dump(doc);
}

std::string experiment_csv(const ExperimentReport& r) {
    std::ostringstream out;
    out << "magnitude,error_rate,faults,inputs,iterations,final_coverage,termination\n";
    for (const auto& row : r.rows)
        out << num(row.magnitude) << ',' << num(row.error_rate) << ',' << row.faults << ',' << row.inputs << ','
            << row.iterations << ',' << num(row.final_coverage) << ',' << to_string(row.termination) << '\n';
    return out.str();
}

std::string retrain_json(const RetrainReport& r) {
    return dump({{"format", "themis-retrain"},
                 {"version", std::string(version())},
                 {"faults_used", r.faults_used},
                 {"train_size", r.train_size},
                 {"heldout_size", r.heldout_size},
                 {"perturbed_accuracy_before", r.perturbed_before},
                 {"perturbed_accuracy_after", r.perturbed_after},
                 {"clean_accuracy_before", r.clean_before},
                 {"clean_accuracy_after", r.clean_after},
                 {"control_perturbed_accuracy_after", r.control_perturbed_after},
                 {"control_clean_accuracy_after", r.control_clean_after},
                 {"gain", r.gain()}});
}

std::string sample_size_json(const SampleSizeStudy& s, const std::vector<ThresholdRow>& thresholds) {
    json rows = json::array();
    for (const auto& row : s.rows)
        rows.push_back({{"k", row.k},
                        {"coverage", row.coverage},
                        {"abs_error", row.abs_error},
                        {"median_coverage", row.median_coverage},
                        {"median_abs_error", row.median_abs_error}});
    json trows = json::array();
    for (const auto& t : thresholds)
        trows.push_back({{"threshold", t.threshold}, {"coverage", t.coverage}, {"median_coverage", t.median_coverage}});
    return dump({{"format", "themis-sample-size"},
                 {"version", std::string(version())},
                 {"num_neurons", s.num_neurons},
                 {"samples_per_neuron", s.samples_per_neuron},
                 {"threshold", s.threshold},
                 {"ground_truth", s.ground_truth},
                 {"median_ground_truth", s.median_ground_truth},
                 {"rows", std::move(rows)},
                 {"thresholds", std::move(trows)}});
}

std::string sample_size_csv(const SampleSizeStudy& s) {
    std::ostringstream out;
    out << "k,median_coverage,median_abs_error,median_ground_truth\n";
    for (const auto& row : s.rows)
        out << row.k << ',' << num(row.median_coverage) << ',' << num(row.median_abs_error) << ','
            << num(s.median_ground_truth) << '\n';
    return out.str();
}

std::string manifest_json(const RunManifest& m) {
    json config = json::object();
    for (const auto& [k, v] : m.config) config[k] = v;
    return dump({{"format", "themis-manifest"},
                 {"tool", "themis"},
                 {"version", std::string(version())},
                 {"git_describe", std::string(git_describe())},
                 {"command", m.command},
                 {"seed", m.seed},
                 {"config", std::move(config)},
                 {"inputs", m.inputs},
                 {"outputs", m.outputs}});
}

}  // namespace themis
