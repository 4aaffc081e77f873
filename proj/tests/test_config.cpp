#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "istn/config.hpp"

namespace fs = std::filesystem;
using istn::config::ExperimentConfig;
using istn::config::load_config;
using istn::config::SeedBank;

namespace {

fs::path write_temp_config(const std::string& name, const nlohmann::json& j) {
    const fs::path p = fs::temp_directory_path() / name;
    std::ofstream f(p);
    f << j.dump(2);
    return p;
}

}  // namespace

TEST_CASE("preset defaults populate every consumer struct") {
    ExperimentConfig toy = load_config("", 0, /*use_env=*/false);
    REQUIRE(toy.preset() == "telesat");

    auto c = toy.constellation();
    CHECK(c.num_planes == 27);
    CHECK(c.sats_per_plane == 13);
    CHECK(c.altitude_m == Catch::Approx(1015e3));
    CHECK(c.inclination_deg == Catch::Approx(99.5));
    CHECK(toy.stations().size() == 8);
    CHECK(toy.station_names().front() == "new_york");

    auto sp = toy.sim_params();
    CHECK(sp.rf.bandwidth_hz == Catch::Approx(5e8));
    CHECK(sp.rf.carrier_hz == Catch::Approx(28e9));
    CHECK(sp.fso.wavelength_nm == Catch::Approx(1550.0));
    CHECK(sp.packet_bits == Catch::Approx(64000.0));
    CHECK(sp.sat_buffer_capacity == 10000);

    auto ec = toy.env_config();
    CHECK(ec.num_slots == 120);
    CHECK(ec.slot_duration_s == Catch::Approx(60.0));
    CHECK(ec.loss_rate_budget == Catch::Approx(0.01));
    CHECK(ec.station_energy_budget_j == Catch::Approx(10000.0));

    auto tp = toy.train_params();
    CHECK(tp.iterations == 300);
    CHECK(tp.gamma == Catch::Approx(0.96));
    CHECK(tp.clip_eps == Catch::Approx(0.2));
    CHECK(tp.lr_lambda == Catch::Approx(1e-3));
    CHECK(tp.ablation == istn::cmadr::Ablation::full);

    // the toy preset swaps in the small constellation and four stations
    const fs::path p =
        write_temp_config("istn_cfg_toy.json", nlohmann::json{{"preset", "toy"}});
    ExperimentConfig small = load_config(p.string(), 0, false);
    CHECK(small.constellation().num_planes == 6);
    CHECK(small.stations().size() == 4);
    CHECK(small.env_config().num_slots == 40);
    CHECK(small.sim_params().fso.visibility_km == Catch::Approx(3000.0));
    fs::remove(p);
}

TEST_CASE("user file overrides merge and win over the preset") {
    nlohmann::json user = {
        {"preset", "toy"},
        {"seed", 42},
        {"time", {{"slots", 12}}},
        {"physics", {{"rf_bandwidth_hz", 3.5e4}}},
        {"budgets", {{"loss_rate", 0.005}}},
        {"learner", {{"iterations", 7}, {"ablation", "global_only"}}},
        {"router", "nsd"},
    };
    const fs::path p = write_temp_config("istn_cfg_merge.json", user);
    ExperimentConfig cfg = load_config(p.string(), 0, false);
    fs::remove(p);

    CHECK(cfg.seeds.master == 42);
    CHECK(cfg.env_config().num_slots == 12);
    // untouched sibling keys keep preset values
    CHECK(cfg.env_config().slot_duration_s == Catch::Approx(5.0));
    CHECK(cfg.sim_params().rf.bandwidth_hz == Catch::Approx(3.5e4));
    CHECK(cfg.sim_params().fso.bandwidth_hz == Catch::Approx(3e4));
    CHECK(cfg.env_config().loss_rate_budget == Catch::Approx(0.005));
    CHECK(cfg.train_params().iterations == 7);
    CHECK(cfg.train_params().ablation == istn::cmadr::Ablation::global_only);
    CHECK(cfg.baseline_kind() == istn::route::BaselineKind::nsd);

    // command-line seed outranks the file
    const fs::path p2 = write_temp_config("istn_cfg_merge2.json", user);
    ExperimentConfig cfg2 = load_config(p2.string(), 777, false);
    fs::remove(p2);
    CHECK(cfg2.seeds.master == 777);
}

TEST_CASE("unknown or mistyped keys are rejected with their full path") {
    auto expect_throw = [](const nlohmann::json& user, const std::string& needle) {
        const fs::path p = write_temp_config("istn_cfg_bad.json", user);
        try {
            load_config(p.string(), 0, false);
            fs::remove(p);
            FAIL("expected an exception mentioning: " << needle);
        } catch (const std::invalid_argument& e) {
            fs::remove(p);
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    expect_throw({{"physics", {{"B_R", 1.0}}}}, "physics.B_R");
    expect_throw({{"tyme", {{"slots", 5}}}}, "tyme");
    expect_throw({{"time", {{"slots", "twelve"}}}}, "time.slots");
    expect_throw({{"learner", {{"ablation", 3}}}}, "learner.ablation");
    expect_throw({{"preset", "jupiter"}}, "jupiter");
    expect_throw({{"stations", nlohmann::json::array({{{"name", "x"}, {"lat_deg", 0.0}}})}},
                 "lon_deg");
}

TEST_CASE("environment variables override file and preset") {
    nlohmann::json user = {{"preset", "toy"}, {"time", {{"slots", 12}}}};
    const fs::path p = write_temp_config("istn_cfg_env.json", user);

    setenv("ISTN_time__slots", "9", 1);
    setenv("ISTN_learner__ablation", "local_only", 1);
    setenv("ISTN_router", "lrst", 1);
    ExperimentConfig cfg = load_config(p.string(), 0, /*use_env=*/true);
    unsetenv("ISTN_time__slots");
    unsetenv("ISTN_learner__ablation");
    unsetenv("ISTN_router");
    fs::remove(p);

    CHECK(cfg.env_config().num_slots == 9);
    CHECK(cfg.train_params().ablation == istn::cmadr::Ablation::local_only);
    CHECK(cfg.baseline_kind() == istn::route::BaselineKind::lrst);

    // malformed env key must fail loudly, not silently apply
    setenv("ISTN_time__slotz", "9", 1);
    const fs::path p2 = write_temp_config("istn_cfg_env2.json", user);
    CHECK_THROWS_AS(load_config(p2.string(), 0, true), std::invalid_argument);
    unsetenv("ISTN_time__slotz");
    fs::remove(p2);
}

TEST_CASE("config hash is stable, canonical, and sensitive to values") {
    nlohmann::json a = {{"preset", "toy"}, {"time", {{"slots", 12}}}};
    // same content, different key order in the file
    nlohmann::json b = {{"time", {{"slots", 12}}}, {"preset", "toy"}};
    const fs::path pa = write_temp_config("istn_cfg_ha.json", a);
    const fs::path pb = write_temp_config("istn_cfg_hb.json", b);
    ExperimentConfig ca = load_config(pa.string(), 0, false);
    ExperimentConfig cb = load_config(pb.string(), 0, false);
    CHECK(ca.hash() == cb.hash());
    CHECK(ca.hash_hex().size() == 16);
    CHECK(ca.hash_hex() == cb.hash_hex());

    nlohmann::json c = {{"preset", "toy"}, {"time", {{"slots", 13}}}};
    const fs::path pc = write_temp_config("istn_cfg_hc.json", c);
    ExperimentConfig cc = load_config(pc.string(), 0, false);
    CHECK(cc.hash() != ca.hash());

    // seed participates in the hash
    ExperimentConfig cd = load_config(pa.string(), 123, false);
    CHECK(cd.hash() != ca.hash());
    fs::remove(pa);
    fs::remove(pb);
    fs::remove(pc);
}

TEST_CASE("seed streams are deterministic, distinct, and independent") {
    SeedBank bank;
    bank.master = 20260814;
    const std::vector<std::string> names = {"traffic", "net_init", "learner", "eval_perturb",
                                            "policy_sample"};
    std::set<uint64_t> seen;
    for (const auto& n : names) {
        const uint64_t v = bank.stream(n);
        CHECK(v != 0);
        CHECK(v == bank.stream(n));  // stable across calls
        seen.insert(v);
    }
    CHECK(seen.size() == names.size());  // pairwise distinct

    // changing the master moves every stream
    SeedBank other = bank;
    other.master = 20260815;
    for (const auto& n : names) CHECK(other.stream(n) != bank.stream(n));

    // overriding one stream leaves the rest untouched
    SeedBank pinned = bank;
    pinned.overrides["traffic"] = 555;
    CHECK(pinned.stream("traffic") == 555);
    for (const auto& n : names)
        if (n != "traffic") CHECK(pinned.stream(n) == bank.stream(n));
    // a zero override means "derive from master"
    pinned.overrides["traffic"] = 0;
    CHECK(pinned.stream("traffic") == bank.stream("traffic"));
}

TEST_CASE("learner seeds and eval env derive from the seed bank") {
    nlohmann::json user = {{"preset", "toy"},
                           {"seed", 99},
                           {"evaluate",
                            {{"k_max_override", -1},
                             {"removed_sats", {1, 4}},
                             {"added_stations", 2}}}};
    const fs::path p = write_temp_config("istn_cfg_seeds.json", user);
    ExperimentConfig cfg = load_config(p.string(), 0, false);
    fs::remove(p);

    auto ls = cfg.learner_seeds();
    CHECK(ls.traffic == cfg.seeds.stream("traffic"));
    CHECK(ls.net_init == cfg.seeds.stream("net_init"));
    CHECK(ls.policy_sample == cfg.seeds.stream("policy_sample"));
    CHECK(ls.learner_shuffle == cfg.seeds.stream("learner"));

    auto ev = cfg.eval_env_config(/*k_max_from_checkpoint=*/7);
    CHECK(ev.k_max_override == 7);  // -1 in config defers to the checkpoint
    CHECK(ev.removed_sats == std::vector<int>{1, 4});
    CHECK(ev.added_stations == 2);
    CHECK(ev.added_station_seed == cfg.seeds.stream("eval_perturb"));

    nlohmann::json user2 = user;
    user2["evaluate"]["k_max_override"] = 3;
    const fs::path p2 = write_temp_config("istn_cfg_seeds2.json", user2);
    ExperimentConfig cfg2 = load_config(p2.string(), 0, false);
    fs::remove(p2);
    CHECK(cfg2.eval_env_config(7).k_max_override == 3);  // explicit wins
}
