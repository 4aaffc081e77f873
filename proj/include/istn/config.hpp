#pragma once

// Experiment configuration: JSON files merged over named presets, environment
// variable overrides (ISTN_ prefix, "__" as the path separator), strict
// unknown-key rejection with full key paths, an FNV-1a hash of the canonical
// merged document, and named deterministic seed streams derived from one
// master seed.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "istn/env.hpp"
#include "istn/learner.hpp"
#include "istn/routing.hpp"

extern "C" char** environ;

namespace istn::config {

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Named deterministic sub-seeds. Every consumer of randomness pulls its own
// stream so overriding one (e.g. traffic) cannot perturb any other.
struct SeedBank {
    uint64_t master = 1;
    std::map<std::string, uint64_t> overrides;  // 0 = derive from master

    uint64_t stream(const std::string& name) const {
        auto it = overrides.find(name);
        if (it != overrides.end() && it->second != 0) return it->second;
        uint64_t h = fnv1a64(name);
        // fold the master seed in byte by byte
        uint64_t m = master;
        for (int i = 0; i < 8; ++i) {
            h ^= (m & 0xff);
            h *= 1099511628211ull;
            m >>= 8;
        }
        return h == 0 ? 1 : h;  // keep mt19937_64 away from the zero seed
    }
};

// ---- preset documents ----

inline nlohmann::json default_stations(const std::string& preset) {
    auto st = [](const char* name, double lat, double lon) {
        return nlohmann::json{{"name", name}, {"lat_deg", lat}, {"lon_deg", lon}};
    };
    if (preset == "toy")
        return nlohmann::json::array({st("new_york", 40.7, -74.0), st("london", 51.5, -0.1),
                                      st("sao_paulo", -23.5, -46.6), st("tokyo", 35.7, 139.7)});
    return nlohmann::json::array(
        {st("new_york", 40.7, -74.0), st("sao_paulo", -23.5, -46.6), st("london", 51.5, -0.1),
         st("cape_town", -33.9, 18.4), st("moscow", 55.8, 37.6), st("beijing", 39.9, 116.4),
         st("sydney", -33.9, 151.2), st("mumbai", 19.1, 72.9)});
}

// Full default document for a preset; every legal key appears here, which is
// what makes strict validation possible.
inline nlohmann::json preset_config(const std::string& preset) {
    nlohmann::json c;
    c["preset"] = preset;
    c["seed"] = 1;
    c["router"] = "cmadr";
    c["weighting"] = "delay";

    if (preset == "telesat" || preset == "custom") {
        c["constellation"] = {{"num_planes", 27},      {"sats_per_plane", 13},
                              {"altitude_km", 1015.0}, {"inclination_deg", 99.5},
                              {"phasing_deg", 0.0},    {"min_elevation_deg", 10.0}};
    } else if (preset == "oneweb") {
        c["constellation"] = {{"num_planes", 18},      {"sats_per_plane", 40},
                              {"altitude_km", 1200.0}, {"inclination_deg", 87.9},
                              {"phasing_deg", 0.0},    {"min_elevation_deg", 10.0}};
    } else if (preset == "toy") {
        c["constellation"] = {{"num_planes", 6},       {"sats_per_plane", 6},
                              {"altitude_km", 1600.0}, {"inclination_deg", 60.0},
                              {"phasing_deg", 10.0},   {"min_elevation_deg", 10.0}};
    } else {
        throw std::invalid_argument("unknown preset: " + preset);
    }
    c["stations"] = default_stations(preset);

    if (preset == "toy") {
        c["time"] = {{"slots", 40}, {"slot_seconds", 5.0}};
        c["physics"] = {{"rf_power_w", 5.0},
                        {"optical_power_w", 5.0},
                        {"rf_bandwidth_hz", 3e4},
                        {"optical_bandwidth_hz", 3e4},
                        {"packet_bits", 64000.0},
                        {"prop_speed_mps", 3e8},
                        {"carrier_hz", 28e9},
                        {"tx_gain_dbi", 45.0},
                        {"rx_gain_dbi", 30.0},
                        {"noise_density_dbm_hz", -174.0},
                        {"optical_amplitude_snr", 1e9},
                        {"pulse_alpha", 0.1},
                        {"wavelength_nm", 1550.0},
                        {"visibility_km", 3000.0},
                        {"size_exponent", 1.3},
                        {"sat_buffer_packets", 25},
                        {"processing_delay_s", 1e-3}};
        c["traffic"] = {{"rate_per_station_per_slot", 24.0}};
        c["budgets"] = {{"loss_rate", 0.01},
                        {"station_energy_j", 700.0},
                        {"sat_energy_j", 650.0}};
        c["learner"] = {{"iterations", 200},       {"episodes_per_batch", 4},
                        {"epochs", 6},             {"minibatch", 256},
                        {"lr_actor", 1e-3},        {"lr_critic", 1e-3},
                        {"lr_lambda", 0.01},       {"gamma", 0.96},
                        {"clip_eps", 0.2},         {"hidden", 48},
                        {"hidden_layers", 2},      {"parameter_sharing", true},
                        {"reward_scale", 1e7},     {"drop_scale", 100.0},
                        {"energy_scale", 50.0},    {"checkpoint_every", 0},
                        {"ablation", "full"}};
    } else {
        c["time"] = {{"slots", 120}, {"slot_seconds", 60.0}};
        c["physics"] = {{"rf_power_w", 5.0},
                        {"optical_power_w", 5.0},
                        {"rf_bandwidth_hz", 5e8},
                        {"optical_bandwidth_hz", 5e8},
                        {"packet_bits", 64000.0},
                        {"prop_speed_mps", 3e8},
                        {"carrier_hz", 28e9},
                        {"tx_gain_dbi", 45.0},
                        {"rx_gain_dbi", 30.0},
                        {"noise_density_dbm_hz", -174.0},
                        {"optical_amplitude_snr", 1e9},
                        {"pulse_alpha", 0.1},
                        {"wavelength_nm", 1550.0},
                        {"visibility_km", 15.0},
                        {"size_exponent", 1.3},
                        {"sat_buffer_packets", 10000},
                        {"processing_delay_s", 1e-3}};
        c["traffic"] = {{"rate_per_station_per_slot", 20.0}};
        c["budgets"] = {{"loss_rate", 0.01},
                        {"station_energy_j", 10000.0},
                        {"sat_energy_j", 10000.0}};
        c["learner"] = {{"iterations", 300},       {"episodes_per_batch", 2},
                        {"epochs", 4},             {"minibatch", 128},
                        {"lr_actor", 1e-4},        {"lr_critic", 1e-4},
                        {"lr_lambda", 1e-3},       {"gamma", 0.96},
                        {"clip_eps", 0.2},         {"hidden", 48},
                        {"hidden_layers", 2},      {"parameter_sharing", true},
                        {"reward_scale", 1e4},     {"drop_scale", 100.0},
                        {"energy_scale", 100.0},   {"checkpoint_every", 0},
                        {"ablation", "full"}};
    }

    c["evaluate"] = {{"episodes", 3},
                     {"checkpoint", ""},
                     {"k_max_override", -1},
                     {"removed_sats", nlohmann::json::array()},
                     {"added_stations", 0}};
    c["sweep"] = {{"loss_rates", nlohmann::json::array()},
                  {"energy_budgets_j", nlohmann::json::array()}};
    c["seeds"] = {{"traffic", 0},
                  {"net_init", 0},
                  {"learner", 0},
                  {"eval_perturb", 0},
                  {"policy_sample", 0}};
    return c;
}

// ---- merge + validation ----

namespace detail {

inline bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

inline void merge_validated(nlohmann::json& base, const nlohmann::json& user,
                            const std::string& path) {
    if (!user.is_object())
        throw std::invalid_argument("config: expected an object at " +
                                    (path.empty() ? std::string("<root>") : path));
    for (const auto& [key, value] : user.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw std::invalid_argument("config: unknown key: " + here);
        auto& slot = base[key];
        if (slot.is_object() && !value.is_null()) {
            merge_validated(slot, value, here);
        } else {
            if (!same_kind(slot, value))
                throw std::invalid_argument("config: wrong type for key: " + here);
            slot = value;
        }
    }
}

inline void set_path(nlohmann::json& doc, const std::string& dotted, const nlohmann::json& value) {
    nlohmann::json* at = &doc;
    size_t pos = 0;
    std::vector<std::string> parts;
    while (true) {
        const size_t dot = dotted.find('.', pos);
        parts.push_back(dotted.substr(pos, dot == std::string::npos ? dot : dot - pos));
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) at = &(*at)[parts[i]];
    (*at)[parts.back()] = value;
}

}  // namespace detail

// Collects ISTN_-prefixed environment variables into a config fragment;
// "__" in the name becomes a "." in the key path, values parse as JSON with a
// string fallback.
inline nlohmann::json env_overrides(const char* prefix = "ISTN_") {
    nlohmann::json frag = nlohmann::json::object();
    const size_t plen = std::string(prefix).size();
    for (char** e = environ; e && *e; ++e) {
        const std::string entry(*e);
        if (entry.rfind(prefix, 0) != 0) continue;
        const size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(plen, eq - plen);
        const std::string raw = entry.substr(eq + 1);
        size_t at;
        while ((at = key.find("__")) != std::string::npos) key.replace(at, 2, ".");
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::parse_error&) {
            value = raw;
        }
        detail::set_path(frag, key, value);
    }
    return frag;
}

struct ExperimentConfig {
    nlohmann::json doc;  // fully merged canonical document
    SeedBank seeds;

    std::string preset() const { return doc.at("preset").get<std::string>(); }
    std::string router() const { return doc.at("router").get<std::string>(); }
    std::string weighting() const { return doc.at("weighting").get<std::string>(); }

    uint64_t hash() const { return fnv1a64(doc.dump()); }
    std::string hash_hex() const { return hex64(hash()); }

    geom::ConstellationConfig constellation() const {
        const auto& k = doc.at("constellation");
        geom::ConstellationConfig c;
        c.num_planes = k.at("num_planes").get<int>();
        c.sats_per_plane = k.at("sats_per_plane").get<int>();
        c.altitude_m = k.at("altitude_km").get<double>() * 1e3;
        c.inclination_deg = k.at("inclination_deg").get<double>();
        c.phasing_deg = k.at("phasing_deg").get<double>();
        c.min_elevation_deg = k.at("min_elevation_deg").get<double>();
        return c;
    }

    std::vector<geom::GroundStation> stations() const {
        std::vector<geom::GroundStation> out;
        int id = 0;
        for (const auto& s : doc.at("stations"))
            out.push_back({id++, s.at("lat_deg").get<double>(), s.at("lon_deg").get<double>()});
        return out;
    }

    std::vector<std::string> station_names() const {
        std::vector<std::string> out;
        for (const auto& s : doc.at("stations")) out.push_back(s.at("name").get<std::string>());
        return out;
    }

    sim::SimParams sim_params() const {
        const auto& p = doc.at("physics");
        sim::SimParams sp;
        sp.rf.bandwidth_hz = p.at("rf_bandwidth_hz").get<double>();
        sp.rf.tx_power_w = p.at("rf_power_w").get<double>();
        sp.rf.carrier_hz = p.at("carrier_hz").get<double>();
        sp.rf.tx_gain_dbi = p.at("tx_gain_dbi").get<double>();
        sp.rf.rx_gain_dbi = p.at("rx_gain_dbi").get<double>();
        sp.rf.noise_density_dbm_hz = p.at("noise_density_dbm_hz").get<double>();
        sp.fso.bandwidth_hz = p.at("optical_bandwidth_hz").get<double>();
        sp.fso.tx_power_w = p.at("optical_power_w").get<double>();
        sp.fso.amplitude_snr = p.at("optical_amplitude_snr").get<double>();
        sp.fso.pulse_alpha = p.at("pulse_alpha").get<double>();
        sp.fso.wavelength_nm = p.at("wavelength_nm").get<double>();
        sp.fso.visibility_km = p.at("visibility_km").get<double>();
        sp.fso.size_exponent = p.at("size_exponent").get<double>();
        sp.packet_bits = p.at("packet_bits").get<double>();
        sp.prop_speed_mps = p.at("prop_speed_mps").get<double>();
        sp.processing_delay_s = p.at("processing_delay_s").get<double>();
        sp.sat_buffer_capacity = p.at("sat_buffer_packets").get<int>();
        return sp;
    }

    env::EnvConfig env_config() const {
        env::EnvConfig e;
        e.constellation = constellation();
        e.stations = stations();
        e.num_slots = doc.at("time").at("slots").get<int>();
        e.slot_duration_s = doc.at("time").at("slot_seconds").get<double>();
        e.sim = sim_params();
        e.traffic.rate_per_station_per_slot =
            doc.at("traffic").at("rate_per_station_per_slot").get<double>();
        e.station_energy_budget_j = doc.at("budgets").at("station_energy_j").get<double>();
        e.sat_energy_budget_j = doc.at("budgets").at("sat_energy_j").get<double>();
        e.loss_rate_budget = doc.at("budgets").at("loss_rate").get<double>();
        return e;
    }

    // Evaluation-time variant: perturbations plus a frozen uplink head width.
    env::EnvConfig eval_env_config(int k_max_from_checkpoint) const {
        env::EnvConfig e = env_config();
        const auto& ev = doc.at("evaluate");
        const int k_over = ev.at("k_max_override").get<int>();
        e.k_max_override = k_over >= 0 ? k_over : k_max_from_checkpoint;
        e.removed_sats = ev.at("removed_sats").get<std::vector<int>>();
        e.added_stations = ev.at("added_stations").get<int>();
        e.added_station_seed = seeds.stream("eval_perturb");
        return e;
    }

    cmadr::TrainParams train_params() const {
        const auto& l = doc.at("learner");
        cmadr::TrainParams p;
        p.iterations = l.at("iterations").get<int>();
        p.episodes_per_batch = l.at("episodes_per_batch").get<int>();
        p.epochs = l.at("epochs").get<int>();
        p.minibatch = l.at("minibatch").get<int>();
        p.lr_actor = l.at("lr_actor").get<double>();
        p.lr_critic = l.at("lr_critic").get<double>();
        p.lr_lambda = l.at("lr_lambda").get<double>();
        p.gamma = l.at("gamma").get<double>();
        p.clip_eps = l.at("clip_eps").get<double>();
        p.hidden = l.at("hidden").get<int>();
        p.hidden_layers = l.at("hidden_layers").get<int>();
        p.parameter_sharing = l.at("parameter_sharing").get<bool>();
        p.reward_scale = l.at("reward_scale").get<double>();
        p.drop_scale = l.at("drop_scale").get<double>();
        p.energy_scale = l.at("energy_scale").get<double>();
        p.checkpoint_every = l.at("checkpoint_every").get<int>();
        p.ablation = cmadr::ablation_from_name(l.at("ablation").get<std::string>());
        return p;
    }

    cmadr::Seeds learner_seeds() const {
        cmadr::Seeds s;
        s.net_init = seeds.stream("net_init");
        s.policy_sample = seeds.stream("policy_sample");
        s.traffic = seeds.stream("traffic");
        s.learner_shuffle = seeds.stream("learner");
        return s;
    }

    route::BaselineKind baseline_kind() const {
        const auto r = router();
        if (r == "dijkstra") return route::BaselineKind::dijkstra;
        if (r == "lrst") return route::BaselineKind::lrst;
        if (r == "nsd") return route::BaselineKind::nsd;
        if (r == "csgi") return route::BaselineKind::csgi;
        throw std::invalid_argument("router '" + r + "' is not a baseline");
    }

    route::EdgeWeighting edge_weighting() const {
        const auto w = weighting();
        if (w == "delay") return route::EdgeWeighting::delay;
        if (w == "hops") return route::EdgeWeighting::hops;
        if (w == "distance") return route::EdgeWeighting::distance;
        throw std::invalid_argument("unknown weighting: " + w);
    }
};

// Loads a config: preset defaults, then the optional JSON file, then ISTN_
// environment overrides, then the optional master-seed override from the CLI.
inline ExperimentConfig load_config(const std::string& file_path, uint64_t cli_seed = 0,
                                    bool use_env = true) {
    nlohmann::json user = nlohmann::json::object();
    if (!file_path.empty()) {
        std::ifstream f(file_path);
        if (!f) throw std::invalid_argument("config: cannot open " + file_path);
        user = nlohmann::json::parse(f);
    }
    nlohmann::json env_frag = use_env ? env_overrides() : nlohmann::json::object();

    std::string preset = "telesat";
    if (user.contains("preset")) preset = user.at("preset").get<std::string>();
    if (env_frag.contains("preset")) preset = env_frag.at("preset").get<std::string>();

    nlohmann::json doc = preset_config(preset);
    // station lists replace wholesale rather than merging per entry
    if (user.contains("stations")) {
        doc["stations"] = user.at("stations");
        user.erase("stations");
    }
    detail::merge_validated(doc, user, "");
    if (env_frag.contains("stations")) {
        doc["stations"] = env_frag.at("stations");
        env_frag.erase("stations");
    }
    detail::merge_validated(doc, env_frag, "");

    for (const auto& s : doc.at("stations")) {
        for (const auto& key : {"name", "lat_deg", "lon_deg"})
            if (!s.contains(key))
                throw std::invalid_argument(std::string("config: station entry missing key: ") + key);
        for (const auto& [k, v] : s.items())
            if (std::string(k) != "name" && std::string(k) != "lat_deg" && std::string(k) != "lon_deg")
                throw std::invalid_argument("config: unknown key: stations[]." + k);
    }

    ExperimentConfig cfg;
    if (cli_seed != 0) doc["seed"] = cli_seed;
    cfg.doc = std::move(doc);
    cfg.seeds.master = cfg.doc.at("seed").get<uint64_t>();
    for (const auto& [name, v] : cfg.doc.at("seeds").items())
        cfg.seeds.overrides[name] = v.get<uint64_t>();
    return cfg;
}

}  // namespace istn::config
