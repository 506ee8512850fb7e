// Experiment front door: dataset synthesis, federated training runs,
// evaluation, ablation grids and affinity dumps.
//
// Exit codes: 0 ok, 2 configuration error, 3 runtime error.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedlppa/config.hpp"

using namespace fedlppa;
using nlohmann::json;

namespace {

std::filesystem::path resolve_root(const std::filesystem::path& p) {
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("FEDLPPA_OUTPUT_ROOT"))
        return std::filesystem::path(root) / p;
    return p;
}

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;  // key=value overrides
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_file, "TOML config file (flat keys)");
    cmd->add_option("--set", o.sets, "override: key=value (repeatable)")->take_all();
}

ExperimentConfig build_config(const CommonOpts& o) {
    ExperimentConfig cfg;
    if (!o.config_file.empty()) cfg = load_config(o.config_file);
    std::map<std::string, std::string> kv;
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + s + "'");
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    apply_overrides(cfg, kv);
    cfg.validate();
    return cfg;
}

void snapshot_config(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    std::ofstream f(dir / "config.toml");
    f << cfg.to_toml();
}

int cmd_synth(const CommonOpts& o, bool force) {
    ExperimentConfig cfg = build_config(o);
    const auto out = resolve_root(cfg.dataset_dir);
    if (std::filesystem::exists(out) && !std::filesystem::is_empty(out) && !force)
        throw std::invalid_argument("refusing to overwrite " + out.string() +
                                    " (use --force)");
    generate_federation(site_specs_for(cfg), cfg.seed, out);
    std::cout << "dataset written to " << out.string() << "\n";
    return 0;
}

json eval_sites(const std::filesystem::path& ckpt_root,
                const std::filesystem::path& dataset_dir) {
    const int n = count_sites(dataset_dir);
    if (n == 0) throw std::runtime_error("no sites in " + dataset_dir.string());
    const bool per_site = std::filesystem::exists(ckpt_root / "site_0");
    json sites = json::array();
    double overall_d = 0.0, overall_h = 0.0;
    for (int i = 0; i < n; ++i) {
        SiteDataset ds = load_site(dataset_dir, i);
        const auto dir = per_site ? ckpt_root / ("site_" + std::to_string(i))
                                  : ckpt_root / "global";
        SegModel model = SegModel::load_checkpoint(dir);
        ClassMetrics m = evaluate_on(model, ds.test, per_site ? i : 0, ds.spec.sparsity());
        sites.push_back({{"site", i}, {"dice", m.dice}, {"hd95", m.hd95},
                         {"mean_dice", m.mean_dice}, {"mean_hd95", m.mean_hd95}});
        overall_d += m.mean_dice;
        overall_h += m.mean_hd95;
    }
    return json{{"sites", sites},
                {"overall", {{"mean_dice", overall_d / n}, {"mean_hd95", overall_h / n}}}};
}

int cmd_train(const CommonOpts& o, std::string name, bool force) {
    ExperimentConfig cfg = build_config(o);
    if (name.empty()) {
        name = to_string(cfg.method);
        if (cfg.method == Method::FedLPPA) name += "_" + to_string(cfg.strategy);
        name += "_seed" + std::to_string(cfg.seed);
    }
    RunConfig rc = cfg.to_run_config();
    rc.dataset_dir = resolve_root(cfg.dataset_dir);
    rc.run_dir = resolve_root(cfg.output_dir) / name;
    if (!std::filesystem::exists(rc.dataset_dir))
        throw std::runtime_error("dataset not found: " + rc.dataset_dir.string());
    if (std::filesystem::exists(rc.run_dir) && !force)
        throw std::invalid_argument("refusing to overwrite " + rc.run_dir.string() +
                                    " (use --force)");
    std::filesystem::create_directories(rc.run_dir);
    snapshot_config(cfg, rc.run_dir);
    RunResult r = run_experiment(rc);
    std::cout << "run " << name << ": mean dice " << r.mean_dice << ", mean hd95 "
              << r.mean_hd95 << "\n";
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& dataset_dir) {
    const auto run = resolve_root(run_dir);
    const auto data = resolve_root(dataset_dir);
    json summary = eval_sites(run / "checkpoints", data);
    std::ofstream f(run / "summary.json");
    f << summary.dump(2) << "\n";
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_ablate(const CommonOpts& o, bool force) {
    ExperimentConfig base = build_config(o);
    const auto out = resolve_root(base.output_dir) / ("ablate_seed" + std::to_string(base.seed));
    if (std::filesystem::exists(out) && !force)
        throw std::invalid_argument("refusing to overwrite " + out.string() + " (use --force)");
    std::filesystem::create_directories(out);

    struct Row { std::string name; bool tdf, pd, la; };
    const std::vector<Row> grid = {{"baseline", false, false, false},
                                   {"tdf", true, false, false},
                                   {"tdf_pd", true, true, false},
                                   {"tdf_la", true, false, true},
                                   {"full", true, true, true}};
    std::ofstream ab(out / "ablation.csv");
    ab << "name,mean_dice,mean_hd95\n";
    for (const auto& row : grid) {
        ExperimentConfig cfg = base;
        cfg.method = Method::FedLPPA;
        cfg.tdf_on = row.tdf;
        cfg.pd_on = row.pd;
        cfg.la_on = row.la;
        RunConfig rc = cfg.to_run_config();
        rc.dataset_dir = resolve_root(cfg.dataset_dir);
        rc.run_dir = out / row.name;
        std::filesystem::create_directories(rc.run_dir);
        snapshot_config(cfg, rc.run_dir);
        RunResult r = run_experiment(rc);
        ab << row.name << ',' << r.mean_dice << ',' << r.mean_hd95 << "\n";
        std::cout << row.name << ": dice " << r.mean_dice << "\n";
    }
    std::ofstream st(out / "strategies.csv");
    st << "strategy,mean_dice,mean_hd95\n";
    for (Strategy s : {Strategy::Random, Strategy::FixedOrder, Strategy::HPS, Strategy::PSA}) {
        ExperimentConfig cfg = base;
        cfg.method = Method::FedLPPA;
        cfg.tdf_on = cfg.pd_on = cfg.la_on = true;
        cfg.strategy = s;
        RunConfig rc = cfg.to_run_config();
        rc.dataset_dir = resolve_root(cfg.dataset_dir);
        rc.run_dir = out / ("strategy_" + to_string(s));
        std::filesystem::create_directories(rc.run_dir);
        snapshot_config(cfg, rc.run_dir);
        RunResult r = run_experiment(rc);
        st << to_string(s) << ',' << r.mean_dice << ',' << r.mean_hd95 << "\n";
        std::cout << "strategy " << to_string(s) << ": dice " << r.mean_dice << "\n";
    }
    std::cout << "tables in " << out.string() << "\n";
    return 0;
}

int cmd_dump_affinity(const std::string& run_dir) {
    const auto ckpt = resolve_root(run_dir) / "checkpoints";
    if (!std::filesystem::exists(ckpt / "site_0"))
        throw std::runtime_error("no per-site checkpoints under " + ckpt.string());
    int n = 0;
    while (std::filesystem::exists(ckpt / ("site_" + std::to_string(n)))) ++n;
    std::vector<std::vector<float>> prompts;
    for (int i = 0; i < n; ++i) {
        SegModel m = SegModel::load_checkpoint(ckpt / ("site_" + std::to_string(i)));
        prompts.push_back(m.prompt_vector(m.flatten(Partition::Theta), i));
    }
    for (const auto& row : compute_affinity(prompts)) {
        for (size_t j = 0; j < row.size(); ++j) std::cout << (j ? "," : "") << row[j];
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedlppa: weakly-supervised federated segmentation sandbox"};
    app.require_subcommand(1);

    CommonOpts synth_o, train_o, ablate_o;
    bool synth_force = false, train_force = false, ablate_force = false;
    std::string train_name, eval_run, eval_data, aff_run;

    auto* synth = app.add_subcommand("synth", "generate the synthetic federation dataset");
    add_common(synth, synth_o);
    synth->add_flag("--force", synth_force, "overwrite an existing dataset");

    auto* train = app.add_subcommand("train", "run one training experiment");
    add_common(train, train_o);
    train->add_option("--name", train_name, "run directory name (default derived)");
    train->add_flag("--force", train_force, "overwrite an existing run");

    auto* eval = app.add_subcommand("eval", "evaluate a run's checkpoints");
    eval->add_option("--run", eval_run, "run directory")->required();
    eval->add_option("--dataset", eval_data, "dataset directory")->required();

    auto* ablate = app.add_subcommand("ablate", "component and strategy grids");
    add_common(ablate, ablate_o);
    ablate->add_flag("--force", ablate_force, "overwrite existing grid output");

    auto* dump = app.add_subcommand("dump-affinity", "print the prompt affinity matrix");
    dump->add_option("--run", aff_run, "run directory with per-site checkpoints")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_o, synth_force);
        if (train->parsed()) return cmd_train(train_o, train_name, train_force);
        if (eval->parsed()) return cmd_eval(eval_run, eval_data);
        if (ablate->parsed()) return cmd_ablate(ablate_o, ablate_force);
        if (dump->parsed()) return cmd_dump_affinity(aff_run);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
