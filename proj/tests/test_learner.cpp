#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "istn/learner.hpp"

using namespace istn;

namespace {

env::EnvConfig small_env_config() {
    env::EnvConfig cfg;
    cfg.constellation.num_planes = 6;
    cfg.constellation.sats_per_plane = 6;
    cfg.constellation.altitude_m = 1600e3;
    cfg.constellation.inclination_deg = 60;
    cfg.constellation.phasing_deg = 10;
    cfg.stations = {
        {0, 40.7, -74.0}, {1, 51.5, -0.1}, {2, -23.5, -46.6}, {3, 35.7, 139.7}};
    cfg.num_slots = 10;
    cfg.slot_duration_s = 5;
    cfg.sim.fso.visibility_km = 3000;
    cfg.sim.sat_buffer_capacity = 25;
    cfg.traffic.rate_per_station_per_slot = 5;
    return cfg;
}

// Synthetic agent-slot decisions against a live policy; logp_old comes from
// the policy itself plus an optional offset so ratios differ from one.
struct Synth {
    cmadr::Policy policy;
    std::vector<cmadr::AgentSlot> slots;      // stable storage
    std::vector<cmadr::ActorSample> samples;
    cmadr::LagrangeState lag;

    static Synth make(std::mt19937_64& rng, double logp_offset_scale, int n_samples = 6) {
        Synth s;
        cmadr::TrainParams p;
        p.hidden = 8;
        p.hidden_layers = 1;
        s.policy = cmadr::Policy::make(3, 4, 3, p, rng);
        s.lag.central = 0.3;
        s.lag.local.assign(7, 0.0);
        std::uniform_real_distribution<double> u(-1.5, 1.5);
        for (double& l : s.lag.local) l = std::abs(u(rng));

        s.slots.reserve(static_cast<size_t>(n_samples));
        nn::MlpWorkspace ws;
        for (int i = 0; i < n_samples; ++i) {
            const int cls = static_cast<int>(rng() % 2);
            const int agent = static_cast<int>(rng() % (cls == 0 ? 3u : 4u));
            cmadr::AgentSlot slot;
            const int obs_dim = cls == 0 ? 1 + 3 * 3 : 10;
            slot.obs.resize(static_cast<size_t>(obs_dim));
            for (auto& x : slot.obs) x = std::abs(u(rng)) / 2;
            const int n_dec = 1 + static_cast<int>(rng() % 2);
            for (int k = 0; k < n_dec; ++k) {
                cmadr::DestDecision d;
                d.dst = static_cast<int>(rng() % 3u);
                const int n_act = cls == 0 ? 3 : 5;
                d.mask.assign(static_cast<size_t>(n_act), 0);
                while (true) {  // need at least two options for a real decision
                    int nv = 0;
                    for (auto& m : d.mask) nv += (m = static_cast<uint8_t>(rng() % 2));
                    if (nv >= 2) break;
                }
                auto in = cls == 0 ? s.policy.station_input(agent, d.dst, slot.obs)
                                   : s.policy.sat_input(agent, d.dst, slot.obs);
                const auto& logits = nn::forward(
                    cls == 0 ? s.policy.station_net(agent) : s.policy.sat_net(agent), in, ws);
                auto dist = nn::MaskedCategorical::from(logits, d.mask);
                d.action = dist.sample(rng);
                d.logp_old = dist.log_prob(d.action) + logp_offset_scale * u(rng);
                slot.decisions.push_back(std::move(d));
            }
            s.slots.push_back(std::move(slot));
            cmadr::ActorSample smp;
            smp.cls = cls;
            smp.agent = agent;
            smp.node = cls == 0 ? agent : 3 + agent;
            smp.adv_reward = u(rng);
            smp.adv_central = u(rng);
            smp.adv_local = u(rng);
            s.samples.push_back(smp);
        }
        for (size_t i = 0; i < s.samples.size(); ++i) s.samples[i].slot = &s.slots[i];
        return s;
    }

    std::vector<const cmadr::ActorSample*> batch() const {
        std::vector<const cmadr::ActorSample*> b;
        for (const auto& smp : samples) b.push_back(&smp);
        return b;
    }
};

double fd_probe(Synth& s, cmadr::Ablation mode, double* param, double h) {
    const double save = *param;
    *param = save + h;
    const double up = cmadr::actor_objective(s.policy, s.batch(), s.lag, 0.2, mode);
    *param = save - h;
    const double dn = cmadr::actor_objective(s.policy, s.batch(), s.lag, 0.2, mode);
    *param = save;
    return (up - dn) / (2 * h);
}

}  // namespace

TEST_CASE("discounted returns follow the backward recursion", "[learner]") {
    const auto r = cmadr::discounted_to_go({1.0, 0.0, 2.0}, 0.5);
    REQUIRE(r == std::vector<double>{1.5, 1.0, 2.0});
    REQUIRE(cmadr::discounted_to_go({}, 0.9).empty());
    const auto one = cmadr::discounted_to_go({3.25}, 0.5);
    REQUIRE(one == std::vector<double>{3.25});
}

TEST_CASE("clipped surrogate takes the pessimistic branch", "[learner]") {
    REQUIRE(cmadr::clipped_term(1.5, 1.0, 0.2) == Catch::Approx(1.2));
    REQUIRE(cmadr::clipped_term(0.5, -1.0, 0.2) == Catch::Approx(-0.8));
    REQUIRE(cmadr::clipped_term(1.0, 0.7, 0.2) == Catch::Approx(0.7));
    // outside the trust band the selected branch is constant: zero gradient
    REQUIRE(cmadr::clipped_coeff(1.5, 1.0, 0.2) == 0.0);
    REQUIRE(cmadr::clipped_coeff(0.5, -1.0, 0.2) == 0.0);
    // inside, the gradient coefficient is ratio * advantage
    REQUIRE(cmadr::clipped_coeff(1.1, 0.5, 0.2) == Catch::Approx(0.55));
    REQUIRE(cmadr::clipped_coeff(0.9, -2.0, 0.2) == Catch::Approx(-1.8));
}

TEST_CASE("dual ascent steps match hand-computed values", "[learner]") {
    REQUIRE(cmadr::multiplier_step(0.5, 1e-3, -600.0) == 0.0);
    REQUIRE(cmadr::multiplier_step(0.5, 1e-3, 100.0) == Catch::Approx(0.6));
    // exactly representable arithmetic: gamma 0.75, lr 0.5
    const double d = cmadr::multiplier_delta(0.5, 3.0, 1.0, 0.75);
    REQUIRE(d == 1.0);  // 0.5 + 0.25 * 2.0
    double lam = 0.0;
    lam = cmadr::multiplier_step(lam, 0.5, d);
    REQUIRE(lam == 0.5);
    lam = cmadr::multiplier_step(lam, 0.5, cmadr::multiplier_delta(-0.25, 1.0, 1.0, 0.75));
    REQUIRE(lam == 0.375);
    lam = cmadr::multiplier_step(lam, 0.5, cmadr::multiplier_delta(-4.0, 0.0, 1.0, 0.75));
    REQUIRE(lam == 0.0);
}

TEST_CASE("actor gradient matches finite differences across random policies", "[learner]") {
    std::mt19937_64 rng(318);
    const cmadr::Ablation modes[] = {cmadr::Ablation::full, cmadr::Ablation::global_only,
                                     cmadr::Ablation::local_only};
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto s = Synth::make(rng, 0.05);
        const auto mode = modes[trial % 3];
        cmadr::ActorGrads grads;
        grads.match(s.policy);
        cmadr::actor_objective(s.policy, s.batch(), s.lag, 0.2, mode, &grads);
        const double h = 1e-6;
        auto check_net = [&](nn::Mlp& net, nn::MlpGrad& g) {
            for (size_t l = 0; l < net.w.size(); ++l) {
                for (size_t i = 0; i < net.w[l].size(); i += 7) {
                    const double fd = fd_probe(s, mode, &net.w[l][i], h);
                    const double err = std::abs(g.w[l][i] - fd) /
                                       std::max({std::abs(g.w[l][i]), std::abs(fd), 1e-6});
                    REQUIRE(err <= 1e-4);
                    ++checked;
                }
                for (size_t i = 0; i < net.b[l].size(); i += 3) {
                    const double fd = fd_probe(s, mode, &net.b[l][i], h);
                    const double err = std::abs(g.b[l][i] - fd) /
                                       std::max({std::abs(g.b[l][i]), std::abs(fd), 1e-6});
                    REQUIRE(err <= 1e-4);
                    ++checked;
                }
            }
        };
        check_net(s.policy.station_nets[0], grads.station[0]);
        check_net(s.policy.sat_nets[0], grads.sat[0]);
    }
    REQUIRE(checked > 2000);
}

TEST_CASE("pinned minibatch: objective is deterministic and FD-consistent", "[learner]") {
    std::mt19937_64 rng(777);
    auto s = Synth::make(rng, 0.08, 8);
    std::mt19937_64 rng2(777);
    auto s2 = Synth::make(rng2, 0.08, 8);

    const double o1 = cmadr::actor_objective(s.policy, s.batch(), s.lag, 0.2, cmadr::Ablation::full);
    const double o2 =
        cmadr::actor_objective(s2.policy, s2.batch(), s2.lag, 0.2, cmadr::Ablation::full);
    REQUIRE(o1 == o2);
    REQUIRE(std::isfinite(o1));

    cmadr::ActorGrads grads;
    grads.match(s.policy);
    cmadr::actor_objective(s.policy, s.batch(), s.lag, 0.2, cmadr::Ablation::full, &grads);
    int nonzero = 0;
    for (size_t l = 0; l < grads.station[0].w.size(); ++l)
        for (double g : grads.station[0].w[l])
            if (g != 0.0) ++nonzero;
    REQUIRE(nonzero > 0);
    for (size_t l = 0; l < s.policy.station_nets[0].w.size(); ++l)
        for (size_t i = 0; i < s.policy.station_nets[0].w[l].size(); i += 11) {
            const double fd = fd_probe(s, cmadr::Ablation::full,
                                       &s.policy.station_nets[0].w[l][i], 1e-6);
            const double an = grads.station[0].w[l][i];
            REQUIRE(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}) <= 1e-4);
        }
}

TEST_CASE("importance ratios are one when old log-probs come from the current policy",
          "[learner]") {
    std::mt19937_64 rng(42);
    auto s = Synth::make(rng, 0.0);  // logp_old = current policy exactly
    double expect = 0;
    for (const auto& smp : s.samples)
        expect += smp.adv_reward - s.lag.central * smp.adv_central -
                  s.lag.local[static_cast<size_t>(smp.node)] * smp.adv_local;
    expect /= static_cast<double>(s.samples.size());
    const double obj =
        cmadr::actor_objective(s.policy, s.batch(), s.lag, 0.2, cmadr::Ablation::full);
    REQUIRE(obj == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ablation modes zero out exactly their cost stream", "[learner]") {
    std::mt19937_64 rng(9001);
    auto s = Synth::make(rng, 0.05);

    auto grads_of = [&](cmadr::Ablation mode, const cmadr::LagrangeState& lag) {
        cmadr::ActorGrads g;
        g.match(s.policy);
        cmadr::actor_objective(s.policy, s.batch(), lag, 0.2, mode, &g);
        std::vector<double> flat;
        for (const auto& mg : {g.station[0], g.sat[0]}) {
            for (const auto& layer : mg.w) flat.insert(flat.end(), layer.begin(), layer.end());
            for (const auto& layer : mg.b) flat.insert(flat.end(), layer.begin(), layer.end());
        }
        return flat;
    };

    cmadr::LagrangeState no_local = s.lag;
    std::fill(no_local.local.begin(), no_local.local.end(), 0.0);
    REQUIRE(grads_of(cmadr::Ablation::global_only, s.lag) ==
            grads_of(cmadr::Ablation::full, no_local));

    cmadr::LagrangeState no_central = s.lag;
    no_central.central = 0.0;
    REQUIRE(grads_of(cmadr::Ablation::local_only, s.lag) ==
            grads_of(cmadr::Ablation::full, no_central));
}

TEST_CASE("value regression converges to a constant target", "[learner]") {
    std::mt19937_64 rng(5);
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 64; ++i) {
        X.push_back({u(rng), u(rng), u(rng), u(rng)});
        y.push_back(0.7);
    }
    nn::MlpWorkspace ws;

    // exactly solvable single-layer case: every prediction lands on target
    auto lin = nn::make_mlp({4, 1}, rng);
    nn::AdamState adam_lin;
    cmadr::fit_value_net(lin, adam_lin, X, y, 3000, 64, 1e-2, rng);
    cmadr::fit_value_net(lin, adam_lin, X, y, 2000, 64, 1e-4, rng);
    for (const auto& x : X) REQUIRE(nn::forward(lin, x, ws)[0] == Catch::Approx(0.7).margin(1e-3));

    // hidden-layer case: tight in mean, small residual variance
    std::mt19937_64 rng2(5);
    auto net = nn::make_mlp({4, 16, 1}, rng2);
    nn::AdamState adam;
    cmadr::fit_value_net(net, adam, X, y, 3000, 64, 1e-3, rng2);
    cmadr::fit_value_net(net, adam, X, y, 2000, 64, 1e-4, rng2);
    double mean = 0, mse = 0;
    for (const auto& x : X) {
        const double err = nn::forward(net, x, ws)[0] - 0.7;
        mean += err / 64;
        mse += err * err / 64;
    }
    REQUIRE(std::abs(mean) <= 1e-3);
    REQUIRE(mse <= 1e-4);
}

TEST_CASE("reward-only bandit concentrates on the better arm", "[learner]") {
    std::mt19937_64 rng(11);
    cmadr::TrainParams p;
    p.hidden = 8;
    p.hidden_layers = 1;
    auto pol = cmadr::Policy::make(2, 1, 2, p, rng);
    cmadr::LagrangeState lag;
    lag.local.assign(3, 0.0);
    std::vector<nn::AdamState> adam(1);
    const std::vector<double> obs(static_cast<size_t>(1 + 3 * 2), 0.25);
    const std::vector<uint8_t> mask{1, 1};
    nn::MlpWorkspace ws;

    auto arm0_prob = [&]() {
        const auto in = pol.station_input(0, 1, obs);
        const auto& logits = nn::forward(pol.station_nets[0], in, ws);
        return nn::MaskedCategorical::from(logits, mask).prob(0);
    };

    for (int iter = 0; iter < 200; ++iter) {
        std::vector<cmadr::AgentSlot> slots(32);
        std::vector<cmadr::ActorSample> samples(32);
        double mean_r = 0;
        std::vector<int> acts(32);
        for (int i = 0; i < 32; ++i) {
            const auto in = pol.station_input(0, 1, obs);
            const auto& logits = nn::forward(pol.station_nets[0], in, ws);
            auto dist = nn::MaskedCategorical::from(logits, mask);
            acts[static_cast<size_t>(i)] = dist.sample(rng);
            slots[static_cast<size_t>(i)].obs = obs;
            slots[static_cast<size_t>(i)].decisions.push_back(
                {1, acts[static_cast<size_t>(i)],
                 dist.log_prob(acts[static_cast<size_t>(i)]), mask});
            mean_r += acts[static_cast<size_t>(i)] == 0 ? 1.0 : 0.0;
        }
        mean_r /= 32;
        for (int i = 0; i < 32; ++i) {
            samples[static_cast<size_t>(i)].cls = 0;
            samples[static_cast<size_t>(i)].agent = 0;
            samples[static_cast<size_t>(i)].node = 0;
            samples[static_cast<size_t>(i)].slot = &slots[static_cast<size_t>(i)];
            samples[static_cast<size_t>(i)].adv_reward =
                (acts[static_cast<size_t>(i)] == 0 ? 1.0 : 0.0) - mean_r;
        }
        std::vector<const cmadr::ActorSample*> batch;
        for (const auto& smp : samples) batch.push_back(&smp);
        for (int epoch = 0; epoch < 4; ++epoch) {
            cmadr::ActorGrads g;
            g.match(pol);
            cmadr::actor_objective(pol, batch, lag, 0.2, cmadr::Ablation::full, &g);
            nn::adam_step(pol.station_nets[0], g.station[0], adam[0], 1e-2, +1.0);
        }
    }
    REQUIRE(arm0_prob() >= 0.95);
}

TEST_CASE("constrained bandit: the dual variable prices out the costly arm", "[learner]") {
    std::mt19937_64 rng(23);
    cmadr::TrainParams p;
    p.hidden = 8;
    p.hidden_layers = 1;
    auto pol = cmadr::Policy::make(2, 1, 2, p, rng);
    cmadr::LagrangeState lag;
    lag.local.assign(3, 0.0);
    std::vector<nn::AdamState> adam(1);
    const std::vector<double> obs(static_cast<size_t>(1 + 3 * 2), 0.25);
    const std::vector<uint8_t> mask{1, 1};
    nn::MlpWorkspace ws;
    const double gamma = 0.75, cost_budget = 0.1;

    double max_lambda = 0;
    double tail_cost = 0;
    int tail_n = 0;
    for (int iter = 0; iter < 300; ++iter) {
        std::vector<cmadr::AgentSlot> slots(32);
        std::vector<cmadr::ActorSample> samples(32);
        double mean_r = 0, mean_c = 0;
        std::vector<int> acts(32);
        for (int i = 0; i < 32; ++i) {
            const auto in = pol.station_input(0, 1, obs);
            const auto& logits = nn::forward(pol.station_nets[0], in, ws);
            auto dist = nn::MaskedCategorical::from(logits, mask);
            acts[static_cast<size_t>(i)] = dist.sample(rng);
            slots[static_cast<size_t>(i)].obs = obs;
            slots[static_cast<size_t>(i)].decisions.push_back(
                {1, acts[static_cast<size_t>(i)],
                 dist.log_prob(acts[static_cast<size_t>(i)]), mask});
            mean_r += acts[static_cast<size_t>(i)] == 0 ? 1.0 : 0.8;
            mean_c += acts[static_cast<size_t>(i)] == 0 ? 1.0 : 0.0;
        }
        mean_r /= 32;
        mean_c /= 32;
        for (int i = 0; i < 32; ++i) {
            const double r = acts[static_cast<size_t>(i)] == 0 ? 1.0 : 0.8;
            const double c = acts[static_cast<size_t>(i)] == 0 ? 1.0 : 0.0;
            samples[static_cast<size_t>(i)].cls = 0;
            samples[static_cast<size_t>(i)].agent = 0;
            samples[static_cast<size_t>(i)].node = 0;
            samples[static_cast<size_t>(i)].slot = &slots[static_cast<size_t>(i)];
            samples[static_cast<size_t>(i)].adv_reward = r - mean_r;
            samples[static_cast<size_t>(i)].adv_central = c - mean_c;
        }
        std::vector<const cmadr::ActorSample*> batch;
        for (const auto& smp : samples) batch.push_back(&smp);
        for (int epoch = 0; epoch < 4; ++epoch) {
            cmadr::ActorGrads g;
            g.match(pol);
            cmadr::actor_objective(pol, batch, lag, 0.2, cmadr::Ablation::full, &g);
            nn::adam_step(pol.station_nets[0], g.station[0], adam[0], 1e-2, +1.0);
        }
        lag.central = cmadr::multiplier_step(
            lag.central, 0.5, cmadr::multiplier_delta(0.0, mean_c, cost_budget, gamma));
        max_lambda = std::max(max_lambda, lag.central);
        if (iter >= 250) {
            tail_cost += mean_c;
            ++tail_n;
        }
    }
    // The dual variable activates, prices the costly arm out, and the policy
    // settles near the budget; without it the cost would sit at 1.0.
    REQUIRE(max_lambda > 0.0);
    REQUIRE(tail_cost / tail_n <= 0.3);
}

TEST_CASE("trainer iterations are reproducible and well-formed", "[learner]") {
    auto cfg = small_env_config();
    env::Env e1(cfg), e2(cfg);
    cmadr::TrainParams p;
    p.hidden = 16;
    p.hidden_layers = 1;
    p.episodes_per_batch = 2;
    p.iterations = 3;
    cmadr::Seeds seeds{101, 102, 103};
    cmadr::Trainer t1(e1, p, seeds), t2(e2, p, seeds);

    for (int k = 0; k < 3; ++k) {
        const auto s1 = t1.iterate();
        const auto s2 = t2.iterate();
        REQUIRE(s1.episode_reward == s2.episode_reward);
        REQUIRE(s1.actor_loss == s2.actor_loss);
        REQUIRE(s1.lambda_central == s2.lambda_central);
        REQUIRE(s1.mean_lambda_local == s2.mean_lambda_local);
        REQUIRE(s1.critic_loss_reward == s2.critic_loss_reward);
        REQUIRE(std::isfinite(s1.episode_reward));
        REQUIRE(std::isfinite(s1.actor_loss));
        REQUIRE(s1.loss_rate >= 0.0);
        REQUIRE(s1.max_station_energy_j >= 0.0);
        REQUIRE(s1.iteration == k + 1);
    }
}

TEST_CASE("trainer checkpoints restore policy, critics and duals bit-exactly", "[learner]") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "istn_trainer_ckpt";
    fs::create_directories(dir);
    const std::string base = (dir / "t").string();

    auto cfg = small_env_config();
    env::Env e(cfg);
    cmadr::TrainParams p;
    p.hidden = 16;
    p.hidden_layers = 1;
    cmadr::Seeds seeds{7, 8, 9};
    cmadr::Trainer t(e, p, seeds);
    t.iterate();
    t.iterate();
    t.save(base);

    env::Env e2(cfg);
    cmadr::Trainer t2(e2, p, cmadr::Seeds{70, 80, 90});
    t2.load(base);
    REQUIRE(nn::flatten(t2.policy().station_nets[0]) == nn::flatten(t.policy().station_nets[0]));
    REQUIRE(nn::flatten(t2.policy().sat_nets[0]) == nn::flatten(t.policy().sat_nets[0]));
    REQUIRE(t2.lagrange().central == t.lagrange().central);
    REQUIRE(t2.lagrange().local == t.lagrange().local);

    // actors alone load through the lightweight path and act identically
    nlohmann::json extra;
    auto pol = cmadr::Policy::load(base, &extra);
    REQUIRE(extra.at("k_max").get<int>() == e.k_max());
    env::Env ea(cfg), eb(cfg);
    const auto ma = cmadr::Trainer::run_episode(ea, t.policy(), 555, nullptr, nullptr);
    const auto mb = cmadr::Trainer::run_episode(eb, pol, 555, nullptr, nullptr);
    REQUIRE(ma.total_reward == mb.total_reward);
    REQUIRE(ma.delivered == mb.delivered);
    REQUIRE(ma.node_energy_j == mb.node_energy_j);

    fs::remove_all(dir);
}

TEST_CASE("greedy evaluation runs on perturbed topologies with frozen widths", "[learner]") {
    auto cfg = small_env_config();
    env::Env e(cfg);
    cmadr::TrainParams p;
    p.hidden = 16;
    p.hidden_layers = 1;
    cmadr::Trainer t(e, p, cmadr::Seeds{1, 2, 3});
    t.iterate();

    auto pcfg = cfg;
    pcfg.k_max_override = e.k_max();  // policy head width stays fixed
    pcfg.removed_sats = {3, 17};
    pcfg.added_stations = 1;
    pcfg.added_station_seed = 99;
    env::Env pe(pcfg);
    auto res = cmadr::Trainer::evaluate(pe, t.policy(), 1000, 2);
    REQUIRE(res.episodes.size() == 2);
    for (const auto& ep : res.episodes) {
        REQUIRE(ep.created > 0);
        REQUIRE(ep.delivered > 0);
    }
    REQUIRE(std::isfinite(res.mean_delay_s()));
    REQUIRE(res.loss_rate() >= 0.0);
}
