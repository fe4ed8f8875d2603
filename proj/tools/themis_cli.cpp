#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "themis/campaign_io.hpp"
#include "themis/experiments.hpp"
#include "themis/serialize.hpp"
#include "themis/version.hpp"

namespace fs = std::filesystem;
using namespace themis;

namespace {

// mnist[:train|pool|heldout|all], idx:IMAGES,LABELS, csv:PATH[,classes=N][,header]
constexpr std::size_t kMnistTrain = 2000;
constexpr std::size_t kMnistPool = 1500;

fs::path data_dir() {
    if (const char* env = std::getenv("THEMIS_DATA_DIR"); env && *env) return env;
    return THEMIS_DATA_DIR;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string part; std::getline(ss, part, sep);) out.push_back(part);
    return out;
}

Dataset load_dataset(const std::string& spec, const std::string& default_split) {
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "mnist") {
        const auto all = load_idx(data_dir() / "mnist5k-images-idx3-ubyte", data_dir() / "mnist5k-labels-idx1-ubyte");
        const std::string part = rest.empty() ? default_split : rest;
        const auto s = split_dataset(all, kMnistTrain, kMnistPool);
        if (part == "train") return s.train;
        if (part == "pool") return s.pool;
        if (part == "heldout") return s.heldout;
        if (part == "all") return all;
        throw Error("unknown mnist split '" + part + "' (train, pool, heldout, all)");
    }
    if (kind == "idx") {
        const auto paths = split(rest, ',');
        if (paths.size() != 2) throw Error("idx dataset needs idx:IMAGES,LABELS");
        return load_idx(paths[0], paths[1]);
    }
    if (kind == "csv") {
        const auto parts = split(rest, ',');
        if (parts.empty() || parts[0].empty()) throw Error("csv dataset needs csv:PATH");
        std::size_t classes = 2;
        bool header = false;
        for (std::size_t i = 1; i < parts.size(); ++i) {
            if (parts[i] == "header")
                header = true;
            else if (parts[i].rfind("classes=", 0) == 0)
                classes = std::stoul(parts[i].substr(8));
            else
                throw Error("unknown csv option '" + parts[i] + "'");
        }
        return load_csv(parts[0], classes, header);
    }
    throw Error("unknown dataset '" + spec + "' (mnist[:split], idx:IMAGES,LABELS, csv:PATH[,classes=N][,header])");
}

Dataset fit_to_model(Dataset d, const Model& model) {
    if (d.empty()) throw Error("dataset is empty");
    if (d.inputs.front().shape() != model.input_shape()) d = d.reshaped(model.input_shape());
    return d;
}

/// `gaussian` (random magnitude per input) or a full spec with a fixed magnitude.
struct PerturbChoice {
    Family family = Family::gaussian;
    std::optional<double> magnitude;
    std::size_t pgd_steps = 10;
    std::optional<double> pgd_alpha;
};

PerturbChoice parse_choice(const std::string& text) {
    if (text.find(':') == std::string::npos) return {parse_family(text), std::nullopt, 10, std::nullopt};
    const auto spec = parse_perturb_spec(text);
    return {spec.family, spec.magnitude, spec.steps, spec.step_size};
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

fs::path manifest_path(const fs::path& out) {
    auto p = out;
    p.replace_extension(".manifest.json");
    return p;
}

void write_manifest(const fs::path& out, RunManifest m) {
    m.outputs.insert(m.outputs.begin(), out.filename().string());
    write_file(manifest_path(out), manifest_json(m));
}

struct FuzzOptions {
    double coverage_target = 1.0;
    std::size_t max_iterations = 50;
    std::size_t inner_steps = 10;
    double step_size = 0.01;
    std::size_t batch_size = 100;
    double threshold = 0.05;
    std::size_t sample_size = 1000;

    void add(CLI::App* app) {
        app->add_option("--coverage-target", coverage_target, "Desired coverage c")->check(CLI::Range(0.0, 1.0));
        app->add_option("--max-iterations", max_iterations, "Outer iteration budget");
        app->add_option("--inner-steps", inner_steps, "Ascent steps per candidate");
        app->add_option("--step-size", step_size, "Ascent step size");
        app->add_option("--batch-size", batch_size, "Candidates per iteration");
        app->add_option("--threshold", threshold, "MCSE convergence threshold t");
        app->add_option("--sample-size", sample_size, "Sampled neurons k");
    }

    FuzzConfig config(const PerturbChoice& p, std::uint64_t seed) const {
        FuzzConfig c;
        c.coverage_target = coverage_target;
        c.max_outer_iterations = max_iterations;
        c.inner_steps = inner_steps;
        c.step_size = step_size;
        c.batch_size = batch_size;
        c.seed = seed;
        c.magnitude = p.magnitude;
        c.pgd_steps = p.pgd_steps;
        c.pgd_alpha = p.pgd_alpha;
        c.coverage.threshold = threshold;
        c.coverage.sample_size = sample_size;
        return c;
    }

    void describe(RunManifest& m) const {
        m.config.emplace_back("coverage_target", fmt(coverage_target));
        m.config.emplace_back("max_iterations", std::to_string(max_iterations));
        m.config.emplace_back("inner_steps", std::to_string(inner_steps));
        m.config.emplace_back("step_size", fmt(step_size));
        m.config.emplace_back("batch_size", std::to_string(batch_size));
        m.config.emplace_back("threshold", fmt(threshold));
        m.config.emplace_back("sample_size", std::to_string(sample_size));
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"themis: sensitivity-convergence coverage fuzzing for neural networks"};
    app.set_version_flag("--version", std::string(version()) + " (" + std::string(git_describe()) + ")");
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string model_path, dataset_spec, out_path, perturb_text = "gaussian";

    // train
    auto* train = app.add_subcommand("train", "Train a model with minibatch SGD");
    std::string arch = "mlp:784-64-10";
    TrainConfig tc;
    train->add_option("--arch", arch, "mlp:W0-W1-...-Wn or lenet1");
    train->add_option("--dataset", dataset_spec, "Training data (default mnist:train)");
    train->add_option("--epochs", tc.epochs);
    train->add_option("--lr", tc.learning_rate);
    train->add_option("--batch", tc.batch_size);
    train->add_option("--seed", seed);
    train->add_option("--out", out_path, "Model file")->required();

    // fuzz
    auto* fuzz = app.add_subcommand("fuzz", "Run a coverage-guided fuzzing campaign");
    FuzzOptions fo;
    std::string timings_path, faults_csv_path;
    bool no_checkpoint = false;
    fuzz->add_option("--model", model_path)->required();
    fuzz->add_option("--dataset", dataset_spec, "Inputs to perturb (default mnist:pool)");
    fuzz->add_option("--perturb", perturb_text, "Family, or family:magnitude spec for a fixed magnitude");
    fuzz->add_option("--seed", seed);
    fuzz->add_option("--out", out_path, "Campaign JSON")->required();
    fuzz->add_option("--timings", timings_path, "Write per-phase wall clock here");
    fuzz->add_option("--faults-csv", faults_csv_path, "Write the fault table as CSV");
    fuzz->add_flag("--no-checkpoint", no_checkpoint, "Only write the campaign at the end");
    fo.add(fuzz);

    // baseline
    auto* base = app.add_subcommand("baseline", "Run an NC or KMNC selection campaign");
    BaselineConfig bc;
    std::string metric = "nc", profile_spec = "mnist:train";
    base->add_option("--model", model_path)->required();
    base->add_option("--dataset", dataset_spec, "Inputs to perturb (default mnist:pool)");
    base->add_option("--perturb", perturb_text);
    base->add_option("--metric", metric, "nc or kmnc")->check(CLI::IsMember({"nc", "kmnc"}));
    base->add_option("--profile-dataset", profile_spec, "Data for the KMNC activation bounds");
    base->add_option("--nc-threshold", bc.nc_threshold);
    base->add_option("--k", bc.kmnc_k, "KMNC sections per neuron");
    base->add_option("--budget", bc.attempt_budget, "Attempt budget");
    base->add_option("--patience", bc.patience, "Stop after this many attempts without growth");
    base->add_option("--seed", seed);
    base->add_option("--out", out_path, "Baseline JSON")->required();

    // correlate
    auto* corr = app.add_subcommand("correlate", "Error rate vs faults over the magnitude sweep");
    FuzzOptions co;
    std::string family_name = "gaussian", csv_path;
    corr->add_option("--model", model_path)->required();
    corr->add_option("--dataset", dataset_spec, "Inputs (default mnist:pool)");
    corr->add_option("--family", family_name);
    corr->add_option("--seed", seed);
    corr->add_option("--out", out_path, "Report JSON")->required();
    corr->add_option("--csv", csv_path, "Also write the rows as CSV");
    co.add(corr);

    // retrain
    auto* retrain = app.add_subcommand("retrain", "Fine-tune on campaign faults and measure the gain");
    RetrainConfig rc;
    std::string campaign_path, train_spec = "mnist:train", heldout_spec = "mnist:heldout", save_path;
    retrain->add_option("--model", model_path)->required();
    retrain->add_option("--campaign", campaign_path, "Campaign JSON with faults")->required();
    retrain->add_option("--train-dataset", train_spec);
    retrain->add_option("--heldout", heldout_spec);
    retrain->add_option("--epochs", rc.train.epochs);
    retrain->add_option("--lr", rc.train.learning_rate);
    retrain->add_option("--batch", rc.train.batch_size);
    retrain->add_option("--perturb", perturb_text, "Held-out perturbation");
    retrain->add_option("--seed", seed);
    retrain->add_option("--out", out_path, "Report JSON")->required();
    retrain->add_option("--save-model", save_path, "Write the fine-tuned model");

    // report
    auto* report = app.add_subcommand("report", "Export a campaign as CSV or JSON");
    std::string format = "csv", what = "iterations";
    std::optional<std::size_t> iteration;
    report->add_option("--campaign", campaign_path)->required();
    report->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
    report->add_option("--table", what, "iterations, faults or coverage (csv only)")
        ->check(CLI::IsMember({"iterations", "faults", "coverage"}));
    report->add_option("--iteration", iteration, "Iteration for --table coverage (default last)");
    report->add_option("--out", out_path, "Output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
            std::cerr << "\n" << sub->help();
        return 1;
    }

    try {
        RunManifest m;
        m.seed = seed;
        if (*train) {
            m.command = "train";
            auto data = load_dataset(dataset_spec.empty() ? "mnist:train" : dataset_spec, "train");
            Model model = make_architecture(arch, seed);
            data = fit_to_model(std::move(data), model);
            tc.seed = derive_seed(seed, {0x747263});
            model = sgd_train(std::move(model), data.inputs, data.labels, tc);
            save_model(model, out_path);
            m.config = {{"arch", arch},
                        {"dataset", dataset_spec.empty() ? "mnist:train" : dataset_spec},
                        {"epochs", std::to_string(tc.epochs)},
                        {"lr", fmt(tc.learning_rate)},
                        {"batch", std::to_string(tc.batch_size)},
                        {"train_accuracy", fmt(accuracy(model, data.inputs, data.labels))},
                        {"model_fingerprint", model_fingerprint(model)}};
            write_manifest(out_path, m);
        } else if (*fuzz) {
            m.command = "fuzz";
            const Model model = load_model(model_path);
            const auto data = fit_to_model(load_dataset(dataset_spec.empty() ? "mnist" : dataset_spec, "pool"), model);
            const auto choice = parse_choice(perturb_text);
            const auto cfg = fo.config(choice, seed);
            IterationCallback checkpoint;
            if (!no_checkpoint) checkpoint = [&](const CampaignResult& r) { write_campaign(r, out_path); };
            const auto result = run_campaign(model, data, choice.family, cfg, checkpoint);
            write_campaign(result, out_path);
            m.outputs.push_back(faults_blob_path(out_path).filename().string());
            if (!timings_path.empty()) write_file(timings_path, timings_json(result.timings));
            if (!faults_csv_path.empty()) {
                write_file(faults_csv_path, faults_csv(result.faults));
                m.outputs.push_back(fs::path(faults_csv_path).filename().string());
            }
            m.inputs = {model_path, dataset_spec.empty() ? "mnist" : dataset_spec};
            m.config = {{"perturb", perturb_text}, {"model_fingerprint", result.model_fingerprint}};
            fo.describe(m);
            write_manifest(out_path, m);
            std::cerr << "fuzz: " << result.iterations.size() << " iterations, " << result.inputs_generated
                      << " inputs, " << result.faults.size() << " faults, coverage " << result.final_coverage()
                      << " (" << to_string(result.termination) << ")\n";
        } else if (*base) {
            m.command = "baseline";
            const Model model = load_model(model_path);
            const auto data = fit_to_model(load_dataset(dataset_spec.empty() ? "mnist" : dataset_spec, "pool"), model);
            const auto choice = parse_choice(perturb_text);
            bc.metric = parse_metric(metric);
            bc.seed = seed;
            bc.magnitude = choice.magnitude;
            bc.pgd_steps = choice.pgd_steps;
            bc.pgd_alpha = choice.pgd_alpha;
            std::optional<KmncProfile> profile;
            if (bc.metric == MetricKind::kmnc) {
                const auto pdata = fit_to_model(load_dataset(profile_spec, "train"), model);
                profile = build_kmnc_profile(model, pdata.inputs, bc.kmnc_k);
                m.inputs.push_back(profile_spec);
            }
            const auto result = baseline_campaign(model, data, choice.family, bc, profile ? &*profile : nullptr);
            write_baseline(result, out_path);
            m.outputs.push_back(faults_blob_path(out_path).filename().string());
            m.inputs.insert(m.inputs.begin(), {model_path, dataset_spec.empty() ? "mnist" : dataset_spec});
            m.config = {{"metric", metric},
                        {"perturb", perturb_text},
                        {"budget", std::to_string(bc.attempt_budget)},
                        {"patience", std::to_string(bc.patience)},
                        {"model_fingerprint", result.model_fingerprint}};
            write_manifest(out_path, m);
            std::cerr << "baseline: " << result.attempts << " attempts, " << result.accepted.size() << " accepted, "
                      << result.faults.size() << " faults, coverage " << result.final_coverage << " ("
                      << to_string(result.termination) << ")\n";
        } else if (*corr) {
            m.command = "correlate";
            const Model model = load_model(model_path);
            const auto data = fit_to_model(load_dataset(dataset_spec.empty() ? "mnist" : dataset_spec, "pool"), model);
            const Family family = parse_family(family_name);
            const auto report_data = correlate_experiment(model, data, family, co.config(PerturbChoice{family, std::nullopt, 10, std::nullopt}, seed));
            write_file(out_path, experiment_json(report_data));
            if (!csv_path.empty()) {
                write_file(csv_path, experiment_csv(report_data));
                m.outputs.push_back(fs::path(csv_path).filename().string());
            }
            m.inputs = {model_path, dataset_spec.empty() ? "mnist" : dataset_spec};
            m.config = {{"family", family_name}, {"model_fingerprint", report_data.model_fingerprint}};
            co.describe(m);
            write_manifest(out_path, m);
            if (report_data.correlation)
                std::cerr << "correlate: pearson " << *report_data.correlation << "\n";
            else
                std::cerr << "correlate: " << report_data.correlation_error << "\n";
        } else if (*retrain) {
            m.command = "retrain";
            const Model model = load_model(model_path);
            const auto campaign = read_campaign(campaign_path);
            if (campaign.model_fingerprint != model_fingerprint(model))
                throw Error("campaign was run against a different model");
            const auto tr = fit_to_model(load_dataset(train_spec, "train"), model);
            const auto ho = fit_to_model(load_dataset(heldout_spec, "heldout"), model);
            const auto choice = parse_choice(perturb_text);
            rc.family = choice.family;
            rc.magnitude = choice.magnitude;
            rc.seed = derive_seed(seed, {0x686f});
            rc.train.seed = derive_seed(seed, {0x747263});
            const auto r = retrain_experiment(model, tr, ho, campaign.faults, rc);
            write_file(out_path, retrain_json(r));
            if (!save_path.empty()) {
                Dataset aug = tr;
                for (const auto& f : campaign.faults) {
                    aug.inputs.push_back(f.perturbed_input);
                    aug.labels.push_back(f.label);
                }
                save_model(sgd_train(model, aug.inputs, aug.labels, rc.train), save_path);
                m.outputs.push_back(fs::path(save_path).filename().string());
            }
            m.inputs = {model_path, campaign_path, train_spec, heldout_spec};
            m.config = {{"epochs", std::to_string(rc.train.epochs)},
                        {"lr", fmt(rc.train.learning_rate)},
                        {"batch", std::to_string(rc.train.batch_size)},
                        {"perturb", perturb_text}};
            write_manifest(out_path, m);
            std::cerr << "retrain: perturbed accuracy " << r.perturbed_before << " -> " << r.perturbed_after << "\n";
        } else if (*report) {
            const auto campaign = read_campaign(campaign_path);
            std::string text;
            if (format == "json") {
                text = campaign_json(campaign, faults_blob_path(campaign_path).filename().string());
            } else if (what == "iterations") {
                text = campaign_iterations_csv(campaign);
            } else if (what == "faults") {
                text = faults_csv(campaign.faults);
            } else {
                if (campaign.iterations.empty()) throw Error("campaign has no iterations");
                const std::size_t i = iteration.value_or(campaign.iterations.size() - 1);
                if (i >= campaign.iterations.size()) throw Error("iteration out of range");
                text = coverage_csv(campaign.iterations[i].coverage);
            }
            if (out_path.empty())
                std::cout << text;
            else
                write_file(out_path, text);
        }
    } catch (const std::exception& e) {
        std::cerr << "themis: error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
