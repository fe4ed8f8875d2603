#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "themis/baselines.hpp"
#include "themis/experiments.hpp"
#include "themis/fuzzer.hpp"

namespace themis {

// All JSON here is written with sorted keys and shortest round-trip numbers,
// so equal values give equal bytes. Wall-clock fields are kept out of these
// documents; see timings_json.

/// Fault inputs live next to the JSON file as `<stem>.faults.thm` (THM1 tensors).
std::filesystem::path faults_blob_path(const std::filesystem::path& json_path);

std::string campaign_json(const CampaignResult& result, const std::string& faults_blob_name);
CampaignResult parse_campaign_json(const std::string& text, std::vector<Tensor> fault_inputs);
void write_campaign(const CampaignResult& result, const std::filesystem::path& json_path);
CampaignResult read_campaign(const std::filesystem::path& json_path);

/// One row per iteration: iteration, inputs, new_faults, total_faults,
/// total_sensitivity, sampled, converged, coverage.
std::string campaign_iterations_csv(const CampaignResult& result);
/// One row per fault: input_id, iteration, label, clean_prediction, perturbed_prediction, spec.
std::string faults_csv(const std::vector<FaultRecord>& faults);
/// One row per sampled neuron of one coverage report.
std::string coverage_csv(const CoverageReport& report);

std::string timings_json(const PhaseTimings& timings);

std::string baseline_json(const BaselineResult& result, const std::string& faults_blob_name);
void write_baseline(const BaselineResult& result, const std::filesystem::path& json_path);
/// One row per accepted input: attempt, input_id, spec, coverage.
std::string baseline_csv(const BaselineResult& result);

std::string experiment_json(const ExperimentReport& report);
/// One row per magnitude.
std::string experiment_csv(const ExperimentReport& report);

std::string retrain_json(const RetrainReport& report);

std::string sample_size_json(const SampleSizeStudy& study, const std::vector<ThresholdRow>& thresholds);
std::string sample_size_csv(const SampleSizeStudy& study);

/// Self-describing record written next to every CLI output.
struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

std::string manifest_json(const RunManifest& manifest);

}  // namespace themis
