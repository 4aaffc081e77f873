#pragma once

// Experiment harness: creates timestamped run directories with a manifest,
// writes CSV/JSONL artifacts with round-trip-exact number formatting, and
// implements the commands exposed by the CLI (train, evaluate, compare,
// ablate, sweep, linkcalc, topology, plotdata).

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "istn/config.hpp"
#include "istn/env.hpp"
#include "istn/learner.hpp"
#include "istn/link.hpp"
#include "istn/routing.hpp"

namespace istn::harness {

namespace fs = std::filesystem;

// ---- formatting and CSV ----

// Shortest decimal string that round-trips back to the same double.
inline std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string fmt(int64_t v) { return std::to_string(v); }
inline std::string fmt(uint64_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }

class CsvWriter {
  public:
    explicit CsvWriter(const fs::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open for writing: " + path.string());
    }
    void row(const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

  private:
    std::ofstream out_;
};

// Minimal reader for the CSVs this harness writes (no quoting or escapes).
inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        size_t pos = 0;
        while (true) {
            const size_t comma = line.find(',', pos);
            cells.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    return nlohmann::json::parse(in);
}

// ---- run directories and manifests ----

inline std::string utc_timestamp(const char* format = "%Y%m%d-%H%M%S") {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

inline fs::path make_run_dir(const fs::path& out_root, const std::string& command,
                             const config::ExperimentConfig& cfg) {
    const std::string stem =
        command + "-" + utc_timestamp() + "-" + cfg.hash_hex().substr(0, 8);
    fs::path dir = out_root / stem;
    for (int k = 1; fs::exists(dir); ++k) dir = out_root / (stem + "-" + std::to_string(k));
    fs::create_directories(dir);
    return dir;
}

// Lists every file under `dir` (relative paths, sorted), skipping the
// manifest itself so the manifest can describe the final inventory.
inline std::vector<std::string> inventory(const fs::path& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        if (rel == "manifest.json") continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    return files;
}

class RunContext {
  public:
    RunContext(fs::path dir, std::string command, const config::ExperimentConfig& cfg)
        : dir_(std::move(dir)), command_(std::move(command)), cfg_(cfg) {
        manifest_["command"] = command_;
        manifest_["config_hash"] = cfg.hash_hex();
        manifest_["seed"] = cfg.seeds.master;
        manifest_["started_at_utc"] = utc_timestamp("%Y-%m-%dT%H:%M:%SZ");
        manifest_["config"] = cfg.doc;
        write_json(dir_ / "manifest.json", manifest_);
    }

    const fs::path& dir() const { return dir_; }
    const config::ExperimentConfig& cfg() const { return cfg_; }

    void finish(const nlohmann::json& summary) {
        manifest_["finished_at_utc"] = utc_timestamp("%Y-%m-%dT%H:%M:%SZ");
        manifest_["summary"] = summary;
        manifest_["outputs"] = inventory(dir_);
        write_json(dir_ / "manifest.json", manifest_);
    }

  private:
    fs::path dir_;
    std::string command_;
    const config::ExperimentConfig& cfg_;
    nlohmann::json manifest_;
};

// ---- shared evaluation helpers ----

struct EvalReport {
    int episodes = 0;
    int64_t created = 0, delivered = 0, dropped = 0;
    double mean_delay_s = 0;
    double loss_rate = 0;
    double mean_total_reward = 0;
    double max_station_energy_j = 0, max_sat_energy_j = 0;
    std::vector<int> nodes_over_energy_budget;
    bool loss_within_budget = false;
    bool energy_within_budget = false;
};

inline EvalReport summarize_eval(const env::Env& e, const std::vector<sim::EpisodeMetrics>& eps) {
    EvalReport r;
    r.episodes = static_cast<int>(eps.size());
    const int n_st = e.n_stations(), n_nodes = e.n_nodes();
    std::vector<double> max_energy(static_cast<size_t>(n_nodes), 0.0);
    double reward = 0, delay = 0;
    for (const auto& m : eps) {
        r.created += m.created;
        r.delivered += m.delivered;
        r.dropped += m.dropped;
        reward += m.total_reward;
        delay += m.mean_delay_s;
        for (int v = 0; v < n_nodes; ++v)
            max_energy[static_cast<size_t>(v)] =
                std::max(max_energy[static_cast<size_t>(v)],
                         m.node_energy_j[static_cast<size_t>(v)]);
    }
    if (!eps.empty()) {
        r.mean_total_reward = reward / static_cast<double>(eps.size());
        r.mean_delay_s = delay / static_cast<double>(eps.size());
    }
    r.loss_rate = r.created > 0 ? static_cast<double>(r.dropped) / static_cast<double>(r.created) : 0;
    for (int v = 0; v < n_nodes; ++v) {
        const double budget = e.energy_budget(v);
        const double used = max_energy[static_cast<size_t>(v)];
        if (v < n_st)
            r.max_station_energy_j = std::max(r.max_station_energy_j, used);
        else
            r.max_sat_energy_j = std::max(r.max_sat_energy_j, used);
        if (used > budget) r.nodes_over_energy_budget.push_back(v);
    }
    r.loss_within_budget = r.loss_rate <= e.config().loss_rate_budget;
    r.energy_within_budget = r.nodes_over_energy_budget.empty();
    return r;
}

inline nlohmann::json eval_report_json(const env::Env& e, const EvalReport& r) {
    return {{"episodes", r.episodes},
            {"created", r.created},
            {"delivered", r.delivered},
            {"dropped", r.dropped},
            {"mean_delay_s", r.mean_delay_s},
            {"loss_rate", r.loss_rate},
            {"mean_total_reward", r.mean_total_reward},
            {"max_station_energy_j", r.max_station_energy_j},
            {"max_sat_energy_j", r.max_sat_energy_j},
            {"loss_rate_budget", e.config().loss_rate_budget},
            {"station_energy_budget_j", e.config().station_energy_budget_j},
            {"sat_energy_budget_j", e.config().sat_energy_budget_j},
            {"nodes_over_energy_budget", r.nodes_over_energy_budget},
            {"loss_within_budget", r.loss_within_budget},
            {"energy_within_budget", r.energy_within_budget}};
}

inline std::vector<std::string> episode_header() {
    return {"episode",      "traffic_seed", "created",
            "delivered",    "dropped",      "leftover",
            "held_no_route", "total_reward", "mean_delay_s",
            "loss_rate",    "max_station_energy_j", "max_sat_energy_j"};
}

inline std::vector<std::string> episode_row(int episode, uint64_t seed,
                                            const sim::EpisodeMetrics& m, int n_stations) {
    double max_st = 0, max_sa = 0;
    for (size_t v = 0; v < m.node_energy_j.size(); ++v) {
        if (static_cast<int>(v) < n_stations)
            max_st = std::max(max_st, m.node_energy_j[v]);
        else
            max_sa = std::max(max_sa, m.node_energy_j[v]);
    }
    return {fmt(episode),
            fmt(seed),
            fmt(m.created),
            fmt(m.delivered),
            fmt(m.dropped),
            fmt(m.leftover),
            fmt(m.held_no_route),
            fmt(m.total_reward),
            fmt(m.mean_delay_s),
            fmt(m.loss_rate),
            fmt(max_st),
            fmt(max_sa)};
}

// ---- train ----

using ProgressFn = std::function<void(const cmadr::IterationStats&)>;

inline nlohmann::json run_train(const config::ExperimentConfig& cfg, const fs::path& dir,
                                const ProgressFn& echo = nullptr) {
    env::Env env(cfg.env_config());
    cmadr::Trainer trainer(env, cfg.train_params(), cfg.learner_seeds());

    CsvWriter log(dir / "training_log.csv");
    log.row({"iteration", "episode_reward", "mean_delay_s", "loss_rate",
             "max_station_energy_j", "max_sat_energy_j", "lambda_central",
             "mean_lambda_local", "actor_loss", "critic_loss_reward", "critic_loss_central",
             "critic_loss_local_station", "critic_loss_local_sat"});
    CsvWriter episodes(dir / "episodes.csv");
    {
        auto head = episode_header();
        head.insert(head.begin(), "iteration");
        episodes.row(head);
    }

    cmadr::IterationStats last{};
    const auto on_iter = [&](const cmadr::IterationStats& st) {
        last = st;
        log.row({fmt(st.iteration), fmt(st.episode_reward), fmt(st.mean_delay_s),
                 fmt(st.loss_rate), fmt(st.max_station_energy_j), fmt(st.max_sat_energy_j),
                 fmt(st.lambda_central), fmt(st.mean_lambda_local), fmt(st.actor_loss),
                 fmt(st.critic_loss_reward), fmt(st.critic_loss_central),
                 fmt(st.critic_loss_local_station), fmt(st.critic_loss_local_sat)});
        int k = 0;
        for (const auto& rec : trainer.last_batch()) {
            auto row = episode_row(k++, rec.traffic_seed, rec.metrics, env.n_stations());
            row.insert(row.begin(), fmt(st.iteration));
            episodes.row(row);
        }
        if (echo) echo(st);
    };
    const auto on_checkpoint = [&](int iter) {
        char name[32];
        std::snprintf(name, sizeof name, "checkpoint_iter%06d", iter);
        trainer.save((dir / name).string());
    };

    trainer.train(cfg.train_params().iterations, on_iter, on_checkpoint);
    trainer.save((dir / "checkpoint").string());

    // post-training greedy evaluation on the training topology
    const int eval_eps = cfg.doc.at("evaluate").at("episodes").get<int>();
    auto result = cmadr::Trainer::evaluate(env, trainer.policy(),
                                           cfg.seeds.stream("eval_traffic"), eval_eps);
    const EvalReport report = summarize_eval(env, result.episodes);

    nlohmann::json summary;
    summary["iterations"] = cfg.train_params().iterations;
    summary["checkpoint"] = "checkpoint";
    summary["final_iteration"] = {{"episode_reward", last.episode_reward},
                                  {"mean_delay_s", last.mean_delay_s},
                                  {"loss_rate", last.loss_rate},
                                  {"max_station_energy_j", last.max_station_energy_j},
                                  {"max_sat_energy_j", last.max_sat_energy_j},
                                  {"lambda_central", last.lambda_central},
                                  {"mean_lambda_local", last.mean_lambda_local}};
    summary["eval"] = eval_report_json(env, report);
    summary["env"] = {{"stations", env.n_stations()},
                      {"sats", env.n_sats()},
                      {"k_max", env.k_max()},
                      {"slots", env.num_slots()}};
    write_json(dir / "summary.json", summary);
    return summary;
}

// ---- evaluate ----

inline nlohmann::json run_evaluate(const config::ExperimentConfig& cfg, const fs::path& dir) {
    const std::string ckpt = cfg.doc.at("evaluate").at("checkpoint").get<std::string>();
    if (ckpt.empty())
        throw std::invalid_argument("evaluate.checkpoint must point at a trained model");
    cmadr::Policy policy = cmadr::Policy::load(ckpt);

    env::Env env(cfg.eval_env_config(policy.k_max));
    const int episodes = cfg.doc.at("evaluate").at("episodes").get<int>();
    const uint64_t seed_base = cfg.seeds.stream("eval_traffic");

    CsvWriter eval_csv(dir / "eval.csv");
    eval_csv.row(episode_header());
    std::ofstream slots(dir / "slots.jsonl", std::ios::binary);

    std::vector<sim::EpisodeMetrics> metrics;
    for (int k = 0; k < episodes; ++k) {
        const uint64_t seed = seed_base + static_cast<uint64_t>(k);
        cmadr::EpisodeBuffer buf;
        auto m = cmadr::Trainer::run_episode(env, policy, seed, nullptr, &buf);
        metrics.push_back(m);
        eval_csv.row(episode_row(k, seed, m, env.n_stations()));
        for (const auto& slot : buf.slots) {
            nlohmann::json line = {{"episode", k},
                                   {"slot", slot.sim.slot},
                                   {"created", slot.sim.created},
                                   {"delivered", slot.sim.delivered},
                                   {"dropped", slot.sim.dropped},
                                   {"reward_mps", slot.sim.reward_mps},
                                   {"held_no_route", slot.sim.held_no_route},
                                   {"queue_len_end", slot.sim.queue_len_end},
                                   {"node_energy_j", slot.sim.node_energy_j},
                                   {"node_drops", slot.sim.node_drops}};
            slots << line.dump() << '\n';
        }
    }

    const EvalReport report = summarize_eval(env, metrics);
    nlohmann::json summary;
    summary["checkpoint"] = ckpt;
    summary["eval"] = eval_report_json(env, report);
    summary["env"] = {{"stations", env.n_stations()},
                      {"sats", env.n_sats()},
                      {"k_max", env.k_max()},
                      {"removed_sats", cfg.doc.at("evaluate").at("removed_sats")},
                      {"added_stations", cfg.doc.at("evaluate").at("added_stations")}};
    write_json(dir / "summary.json", summary);
    return summary;
}

// ---- compare (learned policy vs. classical baselines on shared traffic) ----

inline sim::EpisodeMetrics run_baseline_episode(const env::Env& env, route::BaselineKind kind,
                                                route::EdgeWeighting weighting,
                                                const sim::SimParams& sp, uint64_t seed) {
    route::BaselineRouter router(kind, env.snapshots(), sp, weighting);
    sim::Network net(env.n_stations(), env.n_sats(), sp, env.slot_duration_s(),
                     env.config().traffic);
    return sim::run_episode(env.snapshots(), router, net, seed);
}

inline nlohmann::json run_compare(const config::ExperimentConfig& cfg, const fs::path& dir) {
    const std::string ckpt = cfg.doc.at("evaluate").at("checkpoint").get<std::string>();
    const int episodes = cfg.doc.at("evaluate").at("episodes").get<int>();
    const uint64_t seed_base = cfg.seeds.stream("eval_traffic");
    const sim::SimParams sp = cfg.sim_params();

    CsvWriter out(dir / "compare.csv");
    {
        auto head = episode_header();
        head.insert(head.begin(), "router");
        out.row(head);
    }

    std::map<std::string, std::vector<sim::EpisodeMetrics>> by_router;
    env::EnvConfig base_cfg = cfg.env_config();

    if (!ckpt.empty()) {
        cmadr::Policy policy = cmadr::Policy::load(ckpt);
        env::EnvConfig ec = base_cfg;
        ec.k_max_override = policy.k_max;
        env::Env env(ec);
        for (int k = 0; k < episodes; ++k) {
            const uint64_t seed = seed_base + static_cast<uint64_t>(k);
            auto m = cmadr::Trainer::run_episode(env, policy, seed, nullptr, nullptr);
            by_router["cmadr"].push_back(m);
            auto row = episode_row(k, seed, m, env.n_stations());
            row.insert(row.begin(), "cmadr");
            out.row(row);
        }
    }

    env::Env env(base_cfg);
    const route::EdgeWeighting w = cfg.edge_weighting();
    const std::vector<std::pair<std::string, route::BaselineKind>> kinds = {
        {"dijkstra", route::BaselineKind::dijkstra},
        {"lrst", route::BaselineKind::lrst},
        {"nsd", route::BaselineKind::nsd},
        {"csgi", route::BaselineKind::csgi}};
    for (const auto& [name, kind] : kinds) {
        for (int k = 0; k < episodes; ++k) {
            const uint64_t seed = seed_base + static_cast<uint64_t>(k);
            auto m = run_baseline_episode(env, kind, w, sp, seed);
            by_router[name].push_back(m);
            auto row = episode_row(k, seed, m, env.n_stations());
            row.insert(row.begin(), name);
            out.row(row);
        }
    }

    CsvWriter agg(dir / "compare_summary.csv");
    agg.row({"router", "episodes", "mean_delay_s", "loss_rate", "mean_total_reward",
             "max_station_energy_j", "max_sat_energy_j"});
    nlohmann::json summary;
    for (const auto& [name, eps] : by_router) {
        const EvalReport r = summarize_eval(env, eps);
        agg.row({name, fmt(r.episodes), fmt(r.mean_delay_s), fmt(r.loss_rate),
                 fmt(r.mean_total_reward), fmt(r.max_station_energy_j),
                 fmt(r.max_sat_energy_j)});
        summary[name] = eval_report_json(env, r);
    }
    write_json(dir / "summary.json", summary);
    return summary;
}

// ---- ablate: full vs. global-only vs. local-only constraint handling ----

inline nlohmann::json run_ablate(const config::ExperimentConfig& cfg, const fs::path& dir,
                                 const ProgressFn& echo = nullptr) {
    CsvWriter out(dir / "ablate_summary.csv");
    out.row({"variant", "loss_rate", "mean_delay_s", "max_station_energy_j",
             "max_sat_energy_j", "loss_within_budget", "energy_within_budget"});
    nlohmann::json summary;
    for (const std::string variant : {"full", "global_only", "local_only"}) {
        config::ExperimentConfig vcfg = cfg;
        vcfg.doc["learner"]["ablation"] = variant;
        const fs::path vdir = dir / variant;
        fs::create_directories(vdir);
        nlohmann::json s = run_train(vcfg, vdir, echo);
        const auto& ev = s.at("eval");
        out.row({variant, fmt(ev.at("loss_rate").get<double>()),
                 fmt(ev.at("mean_delay_s").get<double>()),
                 fmt(ev.at("max_station_energy_j").get<double>()),
                 fmt(ev.at("max_sat_energy_j").get<double>()),
                 ev.at("loss_within_budget").get<bool>() ? "1" : "0",
                 ev.at("energy_within_budget").get<bool>() ? "1" : "0"});
        summary[variant] = s.at("eval");
    }
    write_json(dir / "summary.json", summary);
    return summary;
}

// ---- sweep over constraint budgets ----

inline nlohmann::json run_sweep(const config::ExperimentConfig& cfg, const fs::path& dir,
                                const ProgressFn& echo = nullptr) {
    std::vector<double> loss_rates =
        cfg.doc.at("sweep").at("loss_rates").get<std::vector<double>>();
    std::vector<double> energies =
        cfg.doc.at("sweep").at("energy_budgets_j").get<std::vector<double>>();
    if (loss_rates.empty())
        loss_rates = {cfg.doc.at("budgets").at("loss_rate").get<double>()};
    if (energies.empty())
        energies = {cfg.doc.at("budgets").at("station_energy_j").get<double>()};

    CsvWriter out(dir / "sweep_summary.csv");
    out.row({"loss_rate_budget", "energy_budget_j", "loss_rate", "mean_delay_s",
             "max_station_energy_j", "max_sat_energy_j", "mean_total_reward",
             "loss_within_budget", "energy_within_budget"});
    nlohmann::json summary = nlohmann::json::array();
    int cell = 0;
    for (double lr : loss_rates) {
        for (double ej : energies) {
            config::ExperimentConfig vcfg = cfg;
            vcfg.doc["budgets"]["loss_rate"] = lr;
            vcfg.doc["budgets"]["station_energy_j"] = ej;
            vcfg.doc["budgets"]["sat_energy_j"] = ej;
            char name[48];
            std::snprintf(name, sizeof name, "cell%02d", cell++);
            const fs::path vdir = dir / name;
            fs::create_directories(vdir);
            nlohmann::json s = run_train(vcfg, vdir, echo);
            const auto& ev = s.at("eval");
            out.row({fmt(lr), fmt(ej), fmt(ev.at("loss_rate").get<double>()),
                     fmt(ev.at("mean_delay_s").get<double>()),
                     fmt(ev.at("max_station_energy_j").get<double>()),
                     fmt(ev.at("max_sat_energy_j").get<double>()),
                     fmt(ev.at("mean_total_reward").get<double>()),
                     ev.at("loss_within_budget").get<bool>() ? "1" : "0",
                     ev.at("energy_within_budget").get<bool>() ? "1" : "0"});
            summary.push_back({{"cell", name},
                               {"loss_rate_budget", lr},
                               {"energy_budget_j", ej},
                               {"eval", ev}});
        }
    }
    write_json(dir / "summary.json", summary);
    return summary;
}

// ---- link budget tables ----

inline nlohmann::json run_linkcalc(const config::ExperimentConfig& cfg, const fs::path& dir) {
    const sim::SimParams sp = cfg.sim_params();
    CsvWriter out(dir / "links.csv");
    out.row({"distance_km", "fspl_db", "rf_rate_bps", "fso_rate_bps", "rf_tx_time_s",
             "rf_tx_energy_j", "fso_tx_time_s", "fso_tx_energy_j", "prop_delay_s"});
    for (int km = 50; km <= 3000; km += 50) {
        const double d = km * 1e3;
        const auto rf = link::budget(d, link::LinkKind::uplink, sp.packet_bits, sp.rf, sp.fso,
                                     sp.prop_speed_mps);
        const auto fso =
            link::budget(d, link::LinkKind::isl, sp.packet_bits, sp.rf, sp.fso, sp.prop_speed_mps);
        out.row({fmt(static_cast<double>(km)),
                 fmt(link::fspl_db(d, sp.rf.carrier_hz, sp.prop_speed_mps)), fmt(rf.rate_bps),
                 fmt(fso.rate_bps), fmt(rf.tx_delay_s), fmt(rf.tx_energy_j), fmt(fso.tx_delay_s),
                 fmt(fso.tx_energy_j), fmt(rf.prop_delay_s)});
    }
    const double alt = cfg.constellation().altitude_m;
    const auto at_alt =
        link::budget(alt, link::LinkKind::uplink, sp.packet_bits, sp.rf, sp.fso, sp.prop_speed_mps);
    nlohmann::json summary = {{"altitude_m", alt},
                              {"rf_rate_at_altitude_bps", at_alt.rate_bps},
                              {"rf_tx_time_at_altitude_s", at_alt.tx_delay_s},
                              {"rf_tx_energy_at_altitude_j", at_alt.tx_energy_j},
                              {"prop_delay_at_altitude_s", at_alt.prop_delay_s},
                              {"fso_beta_per_m", link::fso_beta_per_m(sp.fso)},
                              {"fso_k1", link::fso_k1(sp.fso)},
                              {"fso_k2_per_m", link::fso_k2(sp.fso)}};
    write_json(dir / "summary.json", summary);
    return summary;
}

// ---- per-slot topology census ----

inline nlohmann::json run_topology(const config::ExperimentConfig& cfg, const fs::path& dir) {
    env::Env env(cfg.env_config());
    CsvWriter out(dir / "topology.csv");
    out.row({"slot", "time_s", "live_sats", "isl_edges", "mean_isl_km", "uplink_pairs",
             "mean_uplinks_per_station", "min_uplink_km", "max_uplink_km",
             "stations_with_no_uplink"});
    for (const auto& snap : env.snapshots()) {
        int live = 0, edges = 0, pairs = 0, uncovered = 0;
        double isl_len = 0, min_up = 0, max_up = 0;
        bool any_up = false;
        for (int s = 0; s < snap.num_sats(); ++s) {
            if (!snap.sat_alive(s)) continue;
            ++live;
            for (int dir4 = 0; dir4 < 4; ++dir4) {
                const int nb = snap.neighbor_sets[static_cast<size_t>(s)][static_cast<size_t>(dir4)];
                if (nb > s) {  // count each edge once
                    ++edges;
                    isl_len += snap.neighbor_dist_m[static_cast<size_t>(s)][static_cast<size_t>(dir4)];
                }
            }
        }
        for (int j = 0; j < snap.num_stations; ++j) {
            const auto& set = snap.uplink_sets[static_cast<size_t>(j)];
            if (set.empty()) ++uncovered;
            pairs += static_cast<int>(set.size());
            for (size_t k = 0; k < set.size(); ++k) {
                const double d = snap.uplink_dist_m[static_cast<size_t>(j)][k];
                if (!any_up || d < min_up) min_up = d;
                if (!any_up || d > max_up) max_up = d;
                any_up = true;
            }
        }
        out.row({fmt(snap.slot_index), fmt(snap.time_s), fmt(live), fmt(edges),
                 fmt(edges > 0 ? isl_len / edges / 1e3 : 0.0), fmt(pairs),
                 fmt(snap.num_stations > 0
                         ? static_cast<double>(pairs) / snap.num_stations
                         : 0.0),
                 fmt(min_up / 1e3), fmt(max_up / 1e3), fmt(uncovered)});
    }
    nlohmann::json summary = {{"num_sats", env.n_sats()},
                              {"num_stations", env.n_stations()},
                              {"slots", env.num_slots()},
                              {"slot_duration_s", env.slot_duration_s()},
                              {"k_max", env.k_max()},
                              {"expected_packets", env.expected_packets()}};
    write_json(dir / "summary.json", summary);
    return summary;
}

// ---- tidy per-metric series for plotting, derived from a training run ----

inline void emit_plotdata(const fs::path& run_dir) {
    const auto rows = read_csv(run_dir / "training_log.csv");
    if (rows.size() < 2) throw std::runtime_error("training_log.csv has no data rows");
    std::map<std::string, size_t> col;
    for (size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
    for (const char* need :
         {"iteration", "episode_reward", "mean_delay_s", "loss_rate", "max_station_energy_j",
          "max_sat_energy_j"})
        if (!col.count(need))
            throw std::runtime_error(std::string("training_log.csv lacks column: ") + need);

    const auto manifest = read_json(run_dir / "manifest.json");
    const auto& budgets = manifest.at("config").at("budgets");
    const std::string loss_budget = fmt(budgets.at("loss_rate").get<double>());
    const std::string st_budget = fmt(budgets.at("station_energy_j").get<double>());
    const std::string sa_budget = fmt(budgets.at("sat_energy_j").get<double>());

    const fs::path pd = run_dir / "plots";
    fs::create_directories(pd);
    CsvWriter reward(pd / "reward.csv");
    reward.row({"iteration", "episode_reward"});
    CsvWriter delay(pd / "delay.csv");
    delay.row({"iteration", "mean_delay_s"});
    CsvWriter loss(pd / "loss.csv");
    loss.row({"iteration", "loss_rate", "loss_rate_budget"});
    CsvWriter energy(pd / "energy.csv");
    energy.row({"iteration", "max_station_energy_j", "station_energy_budget_j",
                "max_sat_energy_j", "sat_energy_budget_j"});
    for (size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        reward.row({r[col["iteration"]], r[col["episode_reward"]]});
        delay.row({r[col["iteration"]], r[col["mean_delay_s"]]});
        loss.row({r[col["iteration"]], r[col["loss_rate"]], loss_budget});
        energy.row({r[col["iteration"]], r[col["max_station_energy_j"]], st_budget,
                    r[col["max_sat_energy_j"]], sa_budget});
    }
}

// ---- dispatch ----

struct RunResult {
    fs::path dir;
    nlohmann::json summary;
};

inline RunResult run_command(const std::string& command, const config::ExperimentConfig& cfg,
                             const fs::path& out_root, const ProgressFn& echo = nullptr) {
    const fs::path dir = make_run_dir(out_root, command, cfg);
    RunContext ctx(dir, command, cfg);
    nlohmann::json summary;
    if (command == "train")
        summary = run_train(cfg, dir, echo);
    else if (command == "evaluate")
        summary = run_evaluate(cfg, dir);
    else if (command == "compare")
        summary = run_compare(cfg, dir);
    else if (command == "ablate")
        summary = run_ablate(cfg, dir, echo);
    else if (command == "sweep")
        summary = run_sweep(cfg, dir, echo);
    else if (command == "linkcalc")
        summary = run_linkcalc(cfg, dir);
    else if (command == "topology")
        summary = run_topology(cfg, dir);
    else
        throw std::invalid_argument("unknown command: " + command);
    if (command == "train") emit_plotdata(dir);
    ctx.finish(summary);
    return {dir, summary};
}

}  // namespace istn::harness
