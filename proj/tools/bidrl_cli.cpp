// bidrl: command-line driver for the offline bidding pipeline.
//
//   gen-configs -> collect -> train -> eval -> diagnose -> report
//
// Exit codes: 0 success, 1 runtime fault, 2 usage or validation error.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bidrl/auction_sim.hpp"
#include "bidrl/binio.hpp"
#include "bidrl/dataset.hpp"
#include "bidrl/error.hpp"
#include "bidrl/eval.hpp"
#include "bidrl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bidrl;

namespace {

constexpr const char* kToolVersion = "0.1.0";

/// Relative output paths are resolved against BIDRL_OUTPUT_ROOT when it is set.
fs::path output_path(const fs::path& p) {
    const char* root = std::getenv("BIDRL_OUTPUT_ROOT");
    if (root == nullptr || *root == '\0' || p.is_absolute()) return p;
    return fs::path(root) / p;
}

int default_workers() {
    if (const char* w = std::getenv("BIDRL_WORKERS")) {
        try {
            return std::max(1, std::stoi(w));
        } catch (const std::exception&) {
            throw ConfigError("BIDRL_WORKERS must be an integer");
        }
    }
    return 1;
}

BasePolicy load_policy_or_default(const std::string& path) {
    if (path.empty()) return BasePolicy::default_piecewise_poly();
    try {
        return BasePolicy::from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// Checkpoint files given directly or found (sorted) inside directories.
std::vector<fs::path> expand_checkpoints(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::directory_iterator(in)) {
                const auto name = e.path().filename().string();
                if (name.starts_with("ckpt-") && e.path().extension() == ".bin") found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.emplace_back(in);
        }
    }
    if (out.empty()) throw ConfigError("no checkpoints found");
    return out;
}

BasePolicy default_policy_of(const Checkpoint& ck) {
    BasePolicy p = ck.actor.base;
    p.set_values(ck.default_params.values);
    return p;
}

// ---------------------------------------------------------------------------

struct GenConfigsArgs {
    int n = 100;
    std::string ranges_file;
    std::uint64_t seed = 0;
    std::optional<int> horizon;
    std::string out = "configs.json";
};

int run_gen_configs(const GenConfigsArgs& a) {
    ConfigRanges ranges = a.ranges_file.empty() ? ConfigRanges{} : load_ranges(a.ranges_file);
    if (a.horizon) ranges.horizon = *a.horizon;
    ranges.validate();
    const auto configs = sample_configs(a.n, ranges, a.seed);
    const fs::path out = output_path(a.out);
    save_configs(out, configs);
    std::cout << "wrote " << configs.size() << " configs to " << out.string() << " (sha256 " << configs_digest(configs)
              << ")\n";
    return 0;
}

struct CollectArgs {
    std::string configs;
    int episodes = 1000;
    double sigma_beta = 0.05;
    std::uint64_t seed = 0;
    std::string policy;
    std::string out = "dataset.bin";
    int workers = 1;
};

int run_collect(const CollectArgs& a) {
    const auto configs = load_configs(a.configs);
    const BasePolicy policy = load_policy_or_default(a.policy);
    BehaviorNoiseSpec noise;
    noise.sigma_beta = a.sigma_beta;
    const Dataset ds = collect(configs, policy, noise, {a.episodes, a.seed, a.workers});
    const fs::path out = output_path(a.out);
    save_dataset(out, ds);
    std::cout << "wrote " << ds.episodes() << " episodes, " << ds.size() << " transitions to " << out.string()
              << " (sha256 " << sha256_file(out) << ")\n";
    return 0;
}

int run_validate(const std::string& path) {
    const ValidationReport r = validate_dataset(path);
    std::cout << path << ": " << r.episodes << " episodes, " << r.transitions << " transitions\n";
    for (const auto& p : r.problems) std::cout << "  problem: " << p << '\n';
    std::cout << (r.ok ? "OK\n" : "INVALID\n");
    return r.ok ? 0 : 1;
}

int run_export(const std::string& dataset, const std::string& out_path) {
    const Dataset ds = load_dataset(dataset);
    if (out_path.empty() || out_path == "-") {
        export_text(ds, std::cout);
        return 0;
    }
    const fs::path out = output_path(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    if (!f) throw Error("cannot write " + out.string());
    export_text(ds, f);
    return 0;
}

int run_print_train_config(const std::string& profile) {
    json j;
    j["profile"] = profile;
    std::cout << TrainConfig::from_json(j).to_json().dump(2) << '\n';
    return 0;
}

struct TrainArgs {
    std::string dataset;
    std::string train_config;
    std::string out_dir = "train";
    std::string resume;
    std::optional<double> alpha;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> steps;
    std::string policy;
};

int run_train(const TrainArgs& a) {
    const Dataset ds = load_dataset(a.dataset);
    const fs::path out = output_path(a.out_dir);
    auto progress = [](const LossReport& r) {
        std::cout << "step " << r.step << " bellman " << r.bellman_loss << " penalty " << r.cql_penalty << " actor "
                  << r.actor_loss << " rel_std " << r.mean_rel_std << '\n'
                  << std::flush;
    };
    TrainOutput result;
    if (!a.resume.empty()) {
        result = resume_training(ds, Checkpoint::load(a.resume), out, progress);
    } else {
        if (a.train_config.empty()) throw ConfigError("--train-config is required unless --resume is given");
        json j = json::parse(read_file(a.train_config));
        if (a.alpha) j["cql_alpha"] = *a.alpha;
        if (a.seed) j["seed"] = *a.seed;
        if (a.steps) j["gradient_steps"] = *a.steps;
        const TrainConfig cfg = TrainConfig::from_json(j);
        BasePolicy policy = a.policy.empty() ? BasePolicy::from_json(json::parse(ds.header.policy_json))
                                             : load_policy_or_default(a.policy);
        result = train(ds, cfg, policy, out, progress);
    }
    std::cout << "wrote " << result.checkpoints.size() << " checkpoints and " << result.loss_csv.string() << '\n';
    return 0;
}

struct EvalArgs {
    std::vector<std::string> checkpoints;
    std::string configs;
    int episodes_per_config = 10;
    std::uint64_t seed = 1;
    std::string out_dir = "eval";
    int workers = 1;
};

int run_eval(const EvalArgs& a) {
    const auto configs = load_configs(a.configs);
    std::vector<CurvePoint> points;
    std::optional<BasePolicy> baseline;
    for (const auto& p : expand_checkpoints(a.checkpoints)) {
        const Checkpoint ck = Checkpoint::load(p);
        if (!baseline) baseline = default_policy_of(ck);
        points.push_back({p.stem().string(), ck.step, ck.actor.base});
    }
    const auto rows = learning_curve(points, {*baseline, std::nullopt}, configs, a.episodes_per_config, a.seed,
                                     a.workers);
    const fs::path out = output_path(a.out_dir);
    write_eval_csv(rows, out / "eval.csv");
    write_curve_plot_data(rows, out / "learning_curve.dat");
    for (const auto& r : rows) {
        std::printf("%s step %lld mean %.6g gain %+.4f%% (95%% CI +/- %.4f)\n", r.checkpoint_id.c_str(),
                    static_cast<long long>(r.step), r.pooled_mean, r.relative_gain_pct,
                    r.gain_ci_half_width_pct.value_or(0.0));
    }
    return 0;
}

struct DiagnoseArgs {
    std::string checkpoint;
    std::string configs;
    int episodes_per_config = 30;
    std::uint64_t seed = 2;
    int probes = 2;
    std::string out_dir = "diagnose";
    int workers = 1;
};

int run_diagnose(const DiagnoseArgs& a) {
    const auto configs = load_configs(a.configs);
    const Checkpoint ck = Checkpoint::load(a.checkpoint);
    const double gamma = TrainConfig::from_json(json::parse(ck.config_json)).gamma;
    std::vector<std::size_t> probes;
    const int n = std::min<int>(a.probes, static_cast<int>(configs.size()));
    for (int i = 0; i < n; ++i) {
        probes.push_back(n == 1 ? 0 : static_cast<std::size_t>(i) * (configs.size() - 1) / static_cast<std::size_t>(n - 1));
    }
    const CriticDiagnostic d =
        critic_diagnostics(ck.actor, ck.critic, gamma, configs, a.episodes_per_config, a.seed, probes, a.workers);
    const fs::path out = output_path(a.out_dir);
    write_campaign_csv(d, out / "initial_q.csv");
    write_timestep_csv(d, out / "timestep_q.csv");
    std::printf("pearson(initial Q, empirical return) = %.4f over %zu campaigns\n", d.pearson, d.campaigns.size());
    for (const auto& c : d.curves) {
        std::printf("%s: %.1f%% of steps within 2 std of returns-to-go\n", c.config_id.c_str(),
                    100.0 * c.fraction_within(2.0));
    }
    return 0;
}

std::string file_time(const fs::path& p) {
    const auto sys = std::chrono::file_clock::to_sys(fs::last_write_time(p));
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::floor<std::chrono::seconds>(sys));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int run_report(const std::string& run_dir) {
    const fs::path run = run_dir;
    if (!fs::is_directory(run)) throw ConfigError("run directory does not exist: " + run.string());
    const fs::path report = run / "report";
    fs::create_directories(report);

    std::vector<fs::path> artifacts;
    for (const auto& e : fs::recursive_directory_iterator(run)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), run);
        if (*rel.begin() == "report") continue;
        artifacts.push_back(rel);
    }
    std::sort(artifacts.begin(), artifacts.end());

    json manifest;
    manifest["run_id"] = fs::absolute(run).lexically_normal().filename().string();
    manifest["tool_version"] = kToolVersion;
    json files = json::array();
    for (const auto& rel : artifacts) {
        const fs::path full = run / rel;
        files.push_back({{"path", rel.generic_string()},
                         {"sha256", sha256_file(full)},
                         {"bytes", fs::file_size(full)},
                         {"modified", file_time(full)}});
        if (rel.extension() == ".csv" || rel.extension() == ".dat") {
            std::string flat = rel.generic_string();
            std::replace(flat.begin(), flat.end(), '/', '_');
            fs::copy_file(full, report / flat, fs::copy_options::overwrite_existing);
        }
        if (rel.filename() == "configs.json") manifest["configs_digest"] = configs_digest(load_configs(full));
    }
    manifest["artifacts"] = files;
    write_file_atomic(report / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "report for " << artifacts.size() << " artifacts in " << report.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Offline conservative actor-critic tuning of bidding controllers"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    GenConfigsArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-configs", "Sample random campaign configurations");
    gen_cmd->add_option("--n", gen.n, "Number of campaigns")->check(CLI::PositiveNumber)->capture_default_str();
    gen_cmd->add_option("--ranges-file", gen.ranges_file, "JSON file with sampling ranges (default: built-in)")->check(CLI::ExistingFile);
    gen_cmd->add_option("--seed", gen.seed, "Sampling seed")->capture_default_str();
    gen_cmd->add_option("--horizon", gen.horizon, "Override the episode horizon of the ranges");
    gen_cmd->add_option("--out", gen.out, "Output config file")->capture_default_str();

    CollectArgs col;
    col.workers = default_workers();
    auto* col_cmd = app.add_subcommand("collect", "Roll out the behavior policy and write a dataset");
    col_cmd->add_option("--configs", col.configs, "Campaign config file")->required()->check(CLI::ExistingFile);
    col_cmd->add_option("--episodes", col.episodes, "Number of episodes")->check(CLI::PositiveNumber)->capture_default_str();
    col_cmd->add_option("--sigma-beta", col.sigma_beta, "Behavior noise std")->capture_default_str();
    col_cmd->add_option("--seed", col.seed, "Collection seed")->capture_default_str();
    col_cmd->add_option("--policy", col.policy, "Base policy JSON (default: built-in piecewise polynomial)")->check(CLI::ExistingFile);
    col_cmd->add_option("--out", col.out, "Output dataset file")->capture_default_str();
    col_cmd->add_option("--workers", col.workers, "Worker threads (env BIDRL_WORKERS)")->check(CLI::PositiveNumber)->capture_default_str();

    std::string validate_path;
    auto* val_cmd = app.add_subcommand("validate", "Check a dataset file's structure and invariants");
    val_cmd->add_option("--dataset", validate_path, "Dataset file")->required()->check(CLI::ExistingFile);

    std::string export_in, export_out;
    auto* exp_cmd = app.add_subcommand("export", "Dump a dataset as whitespace-separated text");
    exp_cmd->add_option("--dataset", export_in, "Dataset file")->required()->check(CLI::ExistingFile);
    exp_cmd->add_option("--out", export_out, "Output text file (default: stdout)");

    std::string profile = "paper";
    auto* cfg_cmd = app.add_subcommand("train-config", "Print a complete training config for a profile");
    cfg_cmd->add_option("--profile", profile, "paper or desk")->check(CLI::IsMember({"paper", "desk"}))->capture_default_str();

    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train", "Run conservative actor-critic training");
    tr_cmd->add_option("--dataset", tr.dataset, "Dataset file")->required()->check(CLI::ExistingFile);
    tr_cmd->add_option("--train-config", tr.train_config, "Training config JSON (profile plus overrides)")->check(CLI::ExistingFile);
    tr_cmd->add_option("--out-dir", tr.out_dir, "Directory for checkpoints and losses.csv")->capture_default_str();
    tr_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
    tr_cmd->add_option("--alpha", tr.alpha, "Override cql_alpha");
    tr_cmd->add_option("--seed", tr.seed, "Override the training seed");
    tr_cmd->add_option("--steps", tr.steps, "Override gradient_steps");
    tr_cmd->add_option("--policy", tr.policy, "Initial base policy JSON (default: the dataset's behavior policy)")->check(CLI::ExistingFile);

    EvalArgs ev;
    ev.workers = default_workers();
    auto* ev_cmd = app.add_subcommand("eval", "Evaluate checkpoints against the default base policy");
    ev_cmd->add_option("--checkpoints", ev.checkpoints, "Checkpoint files or directories")->required();
    ev_cmd->add_option("--configs", ev.configs, "Campaign config file")->required()->check(CLI::ExistingFile);
    ev_cmd->add_option("--episodes-per-config", ev.episodes_per_config, "Episodes per campaign")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    ev_cmd->add_option("--seed", ev.seed, "Evaluation seed")->capture_default_str();
    ev_cmd->add_option("--out-dir", ev.out_dir, "Directory for eval.csv and learning_curve.dat")->capture_default_str();
    ev_cmd->add_option("--workers", ev.workers, "Worker threads (env BIDRL_WORKERS)")->check(CLI::PositiveNumber)->capture_default_str();

    DiagnoseArgs dg;
    dg.workers = default_workers();
    auto* dg_cmd = app.add_subcommand("diagnose", "Compare critic predictions with fresh empirical returns");
    dg_cmd->add_option("--checkpoint", dg.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    dg_cmd->add_option("--configs", dg.configs, "Campaign config file")->required()->check(CLI::ExistingFile);
    dg_cmd->add_option("--episodes-per-config", dg.episodes_per_config, "Fresh episodes per campaign")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    dg_cmd->add_option("--seed", dg.seed, "Diagnostic seed")->capture_default_str();
    dg_cmd->add_option("--probes", dg.probes, "Campaigns with per-timestep curves")->check(CLI::NonNegativeNumber)->capture_default_str();
    dg_cmd->add_option("--out-dir", dg.out_dir, "Directory for initial_q.csv and timestep_q.csv")->capture_default_str();
    dg_cmd->add_option("--workers", dg.workers, "Worker threads (env BIDRL_WORKERS)")->check(CLI::PositiveNumber)->capture_default_str();

    std::string run_dir;
    auto* rp_cmd = app.add_subcommand("report", "Collect CSVs and an artifact manifest into <run>/report");
    rp_cmd->add_option("--run", run_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) return run_gen_configs(gen);
        if (*col_cmd) return run_collect(col);
        if (*val_cmd) return run_validate(validate_path);
        if (*exp_cmd) return run_export(export_in, export_out);
        if (*cfg_cmd) return run_print_train_config(profile);
        if (*tr_cmd) return run_train(tr);
        if (*ev_cmd) return run_eval(ev);
        if (*dg_cmd) return run_diagnose(dg);
        if (*rp_cmd) return run_report(run_dir);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const TrainingFault& e) {
        std::cerr << "training fault: " << e.what() << '\n';
        if (!e.last_good_checkpoint().empty()) std::cerr << "last good checkpoint: " << e.last_good_checkpoint() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
