#pragma once

// Constrained multi-agent actor-critic trainer. Actors are trained centrally
// with shared parameters per agent class (ground stations, satellites) and
// executed decentrally from local observations. The update ascends a clipped
// importance-ratio surrogate of the progress reward minus Lagrange-weighted
// clipped surrogates of the shared packet-drop cost and each node's energy
// cost; the multipliers themselves follow a projected dual ascent on the
// constraint gaps. Critics regress discounted cost-to-go targets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "istn/env.hpp"
#include "istn/nn.hpp"

namespace istn::cmadr {

enum class Ablation { full, global_only, local_only };

inline std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::global_only: return "global_only";
        case Ablation::local_only: return "local_only";
    }
    return "full";
}

inline Ablation ablation_from_name(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "global_only") return Ablation::global_only;
    if (s == "local_only") return Ablation::local_only;
    throw std::invalid_argument("unknown ablation mode: " + s);
}

struct LagrangeState {
    double central = 0;
    std::vector<double> local;  // per node, stations first
};

struct TrainParams {
    int iterations = 300;
    int episodes_per_batch = 2;
    int epochs = 4;
    int minibatch = 128;
    double lr_actor = 1e-4;
    double lr_critic = 1e-4;
    double lr_lambda = 1e-3;
    double gamma = 0.96;
    double clip_eps = 0.2;
    int hidden = 48;
    int hidden_layers = 2;
    bool parameter_sharing = true;  // one actor per agent class vs per agent
    Ablation ablation = Ablation::full;
    // Critic targets are regressed in these units to keep them O(1). Reward
    // advantages are normalized per batch; cost advantages stay in the scaled
    // units (and multiplier steps use budget gaps on the same scale) so the
    // multiplier-weighted terms in the actor objective are commensurate with
    // the normalized reward term.
    double reward_scale = 1e4;
    double drop_scale = 100;
    double energy_scale = 100;
    int checkpoint_every = 0;  // 0 = only at the end
};

struct Seeds {
    uint64_t net_init = 1;
    uint64_t policy_sample = 2;
    uint64_t traffic = 3;
    uint64_t learner_shuffle = 4;
};

// ---- small pure pieces ----

inline std::vector<double> discounted_to_go(const std::vector<double>& x, double gamma) {
    std::vector<double> out(x.size(), 0.0);
    double acc = 0;
    for (size_t i = x.size(); i-- > 0;) {
        acc = x[i] + gamma * acc;
        out[i] = acc;
    }
    return out;
}

// Pessimistic clipped surrogate term min(ratio*adv, clip(ratio)*adv).
inline double clipped_term(double ratio, double adv, double eps) {
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
    return std::min(ratio * adv, clipped);
}

// d(clipped_term)/d(sum of new log-probs); the clipped branch is constant in
// the parameters, so its derivative is zero.
inline double clipped_coeff(double ratio, double adv, double eps) {
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
    return ratio * adv <= clipped ? ratio * adv : 0.0;
}

// Projected dual step: multipliers climb while the constraint is violated in
// advantage or in undiscounted episode terms, and decay to zero otherwise.
inline double multiplier_delta(double mean_cost_advantage, double mean_episode_cost,
                               double budget, double gamma) {
    return mean_cost_advantage + (1.0 - gamma) * (mean_episode_cost - budget);
}

inline double multiplier_step(double lambda, double lr, double delta) {
    return std::max(0.0, lambda + lr * delta);
}

// Minibatched MSE regression with Adam; returns the mean per-minibatch MSE
// observed across the pass.
inline double fit_value_net(nn::Mlp& net, nn::AdamState& adam,
                            const std::vector<std::vector<double>>& X,
                            const std::vector<double>& y, int epochs, int minibatch, double lr,
                            std::mt19937_64& rng) {
    if (X.empty()) return 0.0;
    nn::MlpWorkspace ws;
    nn::MlpGrad grad;
    grad.match(net);
    std::vector<size_t> order(X.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    const size_t mb =
        static_cast<size_t>(std::max(1, std::min<int>(minibatch, static_cast<int>(X.size()))));
    double mse_sum = 0;
    int n_updates = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t at = 0; at < order.size(); at += mb) {
            const size_t end = std::min(order.size(), at + mb);
            grad.zero();
            double mse = 0;
            const double inv = 1.0 / static_cast<double>(end - at);
            for (size_t i = at; i < end; ++i) {
                const double pred = nn::forward(net, X[order[i]], ws)[0];
                const double err = pred - y[order[i]];
                mse += err * err * inv;
                nn::backward(net, ws, {2.0 * err * inv}, grad);
            }
            nn::adam_step(net, grad, adam, lr, -1.0);
            mse_sum += mse;
            ++n_updates;
        }
    }
    return n_updates > 0 ? mse_sum / n_updates : 0.0;
}

// ---- policy ----

// Actor bundle for both agent classes. Inputs are the local observation
// concatenated with a one-hot agent id (shared mode only) and a one-hot
// destination station; ids beyond the training-time counts encode as zeros so
// perturbed topologies can still be evaluated.
struct Policy {
    bool shared = true;
    int base_stations = 0;
    int base_sats = 0;
    int k_max = 0;
    int station_obs_dim = 0;
    std::vector<nn::Mlp> station_nets;  // one if shared, else per station
    std::vector<nn::Mlp> sat_nets;

    static Policy make(int n_stations, int n_sats, int k_max, const TrainParams& p,
                       std::mt19937_64& rng) {
        Policy pol;
        pol.shared = p.parameter_sharing;
        pol.base_stations = n_stations;
        pol.base_sats = n_sats;
        pol.k_max = k_max;
        pol.station_obs_dim = 1 + 3 * k_max;
        std::vector<int> st_sizes{pol.station_input_dim()};
        std::vector<int> sa_sizes{pol.sat_input_dim()};
        for (int l = 0; l < p.hidden_layers; ++l) {
            st_sizes.push_back(p.hidden);
            sa_sizes.push_back(p.hidden);
        }
        st_sizes.push_back(k_max);
        sa_sizes.push_back(env::kSatActions);
        const int n_station_nets = pol.shared ? 1 : n_stations;
        const int n_sat_nets = pol.shared ? 1 : n_sats;
        for (int i = 0; i < n_station_nets; ++i)
            pol.station_nets.push_back(nn::make_mlp(st_sizes, rng, 0.01));
        for (int i = 0; i < n_sat_nets; ++i)
            pol.sat_nets.push_back(nn::make_mlp(sa_sizes, rng, 0.01));
        return pol;
    }

    int station_input_dim() const {
        return station_obs_dim + (shared ? base_stations : 0) + base_stations;
    }
    int sat_input_dim() const {
        return env::Env::sat_obs_dim() + (shared ? base_sats : 0) + base_stations;
    }

    nn::Mlp& station_net(int j) {
        return station_nets[shared ? 0 : static_cast<size_t>(j % base_stations)];
    }
    nn::Mlp& sat_net(int s) { return sat_nets[shared ? 0 : static_cast<size_t>(s % base_sats)]; }
    const nn::Mlp& station_net(int j) const {
        return station_nets[shared ? 0 : static_cast<size_t>(j % base_stations)];
    }
    const nn::Mlp& sat_net(int s) const {
        return sat_nets[shared ? 0 : static_cast<size_t>(s % base_sats)];
    }

    std::vector<double> station_input(int j, int dst, const std::vector<double>& obs) const {
        std::vector<double> in;
        in.reserve(static_cast<size_t>(station_input_dim()));
        in.insert(in.end(), obs.begin(), obs.end());
        if (shared) append_onehot(in, j, base_stations);
        append_onehot(in, dst, base_stations);
        return in;
    }
    std::vector<double> sat_input(int s, int dst, const std::vector<double>& obs) const {
        std::vector<double> in;
        in.reserve(static_cast<size_t>(sat_input_dim()));
        in.insert(in.end(), obs.begin(), obs.end());
        if (shared) append_onehot(in, s, base_sats);
        append_onehot(in, dst, base_stations);
        return in;
    }

    static void append_onehot(std::vector<double>& v, int idx, int n) {
        const size_t at = v.size();
        v.resize(at + static_cast<size_t>(n), 0.0);
        if (idx >= 0 && idx < n) v[at + static_cast<size_t>(idx)] = 1.0;
    }

    void save(const std::string& base, const nlohmann::json& extra) const {
        std::vector<std::pair<std::string, const nn::Mlp*>> nets;
        for (size_t i = 0; i < station_nets.size(); ++i)
            nets.emplace_back("actor_station_" + std::to_string(i), &station_nets[i]);
        for (size_t i = 0; i < sat_nets.size(); ++i)
            nets.emplace_back("actor_sat_" + std::to_string(i), &sat_nets[i]);
        nlohmann::json meta = extra;
        meta["policy"] = {{"shared", shared},
                          {"base_stations", base_stations},
                          {"base_sats", base_sats},
                          {"k_max", k_max},
                          {"station_obs_dim", station_obs_dim},
                          {"n_station_nets", station_nets.size()},
                          {"n_sat_nets", sat_nets.size()}};
        nn::checkpoint_save(base, nets, meta);
    }

    // Rebuilds the actors from a checkpoint; network shapes come from the
    // manifest itself.
    static Policy load(const std::string& base, nlohmann::json* extra_out = nullptr) {
        std::ifstream mf(base + ".json");
        if (!mf) throw std::runtime_error("checkpoint: cannot read " + base + ".json");
        nlohmann::json manifest = nlohmann::json::parse(mf);
        const auto& meta = manifest.at("extra").at("policy");
        Policy pol;
        pol.shared = meta.at("shared").get<bool>();
        pol.base_stations = meta.at("base_stations").get<int>();
        pol.base_sats = meta.at("base_sats").get<int>();
        pol.k_max = meta.at("k_max").get<int>();
        pol.station_obs_dim = meta.at("station_obs_dim").get<int>();
        const auto n_st = meta.at("n_station_nets").get<size_t>();
        const auto n_sa = meta.at("n_sat_nets").get<size_t>();

        auto sizes_of = [&](const std::string& name) {
            for (const auto& e : manifest.at("nets"))
                if (e.at("name").get<std::string>() == name)
                    return e.at("sizes").get<std::vector<int>>();
            throw std::runtime_error("checkpoint: missing net " + name);
        };
        std::mt19937_64 rng(0);
        std::vector<std::pair<std::string, nn::Mlp*>> wanted;
        pol.station_nets.reserve(n_st);
        for (size_t i = 0; i < n_st; ++i)
            pol.station_nets.push_back(nn::make_mlp(sizes_of("actor_station_" + std::to_string(i)), rng));
        pol.sat_nets.reserve(n_sa);
        for (size_t i = 0; i < n_sa; ++i)
            pol.sat_nets.push_back(nn::make_mlp(sizes_of("actor_sat_" + std::to_string(i)), rng));
        for (size_t i = 0; i < n_st; ++i)
            wanted.emplace_back("actor_station_" + std::to_string(i), &pol.station_nets[i]);
        for (size_t i = 0; i < n_sa; ++i)
            wanted.emplace_back("actor_sat_" + std::to_string(i), &pol.sat_nets[i]);
        auto extra = nn::checkpoint_load(base, wanted);
        if (extra_out) *extra_out = extra;
        return pol;
    }
};

// ---- rollout storage ----

struct DestDecision {
    int dst = 0;
    int action = 0;
    double logp_old = 0;
    std::vector<uint8_t> mask;
};

struct AgentSlot {
    std::vector<double> obs;
    std::vector<DestDecision> decisions;  // only genuinely stochastic choices
};

struct SlotSample {
    std::vector<double> global;
    std::vector<AgentSlot> stations, sats;
    double reward = 0;
    double central_cost = 0;
    std::vector<double> local_costs;
    sim::SlotMetrics sim;  // full per-slot simulator ledger, for reporting
};

struct EpisodeBuffer {
    std::vector<SlotSample> slots;
    sim::EpisodeMetrics metrics;
};

// One actor-update record: an agent's joint per-destination decision at one
// slot together with the advantages in effect there.
struct ActorSample {
    int cls = 0;  // 0 = station, 1 = satellite
    int agent = 0;
    int node = 0;  // node id, for the local multiplier
    const AgentSlot* slot = nullptr;
    double adv_reward = 0;
    double adv_central = 0;
    double adv_local = 0;
};

struct ActorGrads {
    std::vector<nn::MlpGrad> station, sat;

    void match(const Policy& p) {
        station.resize(p.station_nets.size());
        sat.resize(p.sat_nets.size());
        for (size_t i = 0; i < station.size(); ++i) station[i].match(p.station_nets[i]);
        for (size_t i = 0; i < sat.size(); ++i) sat[i].match(p.sat_nets[i]);
    }
    void zero() {
        for (auto& g : station) g.zero();
        for (auto& g : sat) g.zero();
    }
};

// Mean clipped constrained objective over a minibatch and its exact gradient
// with respect to every actor parameter. Written to be checkable against
// finite differences.
inline double actor_objective(const Policy& pol, const std::vector<const ActorSample*>& batch,
                              const LagrangeState& lag, double eps, Ablation mode,
                              ActorGrads* grads = nullptr) {
    if (batch.empty()) return 0.0;
    nn::MlpWorkspace ws;
    double total = 0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    std::vector<nn::MaskedCategorical> dists;
    std::vector<std::vector<double>> inputs;
    for (const ActorSample* s : batch) {
        const nn::Mlp& net = s->cls == 0 ? pol.station_net(s->agent) : pol.sat_net(s->agent);
        dists.clear();
        inputs.clear();
        double dlogp = 0;
        for (const auto& d : s->slot->decisions) {
            auto in = s->cls == 0 ? pol.station_input(s->agent, d.dst, s->slot->obs)
                                  : pol.sat_input(s->agent, d.dst, s->slot->obs);
            const auto& logits = nn::forward(net, in, ws);
            auto dist = nn::MaskedCategorical::from(logits, d.mask);
            dlogp += dist.log_prob(d.action) - d.logp_old;
            if (grads) {
                dists.push_back(std::move(dist));
                inputs.push_back(std::move(in));
            }
        }
        const double ratio = std::exp(dlogp);
        double obj = clipped_term(ratio, s->adv_reward, eps);
        double coeff = clipped_coeff(ratio, s->adv_reward, eps);
        if (mode != Ablation::local_only) {
            obj -= lag.central * clipped_term(ratio, s->adv_central, eps);
            coeff -= lag.central * clipped_coeff(ratio, s->adv_central, eps);
        }
        if (mode != Ablation::global_only) {
            const double lam = lag.local[static_cast<size_t>(s->node)];
            obj -= lam * clipped_term(ratio, s->adv_local, eps);
            coeff -= lam * clipped_coeff(ratio, s->adv_local, eps);
        }
        total += obj * inv_n;
        if (!grads || coeff == 0.0) continue;
        auto& g = s->cls == 0 ? grads->station[pol.shared ? 0 : static_cast<size_t>(s->agent)]
                              : grads->sat[pol.shared ? 0 : static_cast<size_t>(s->agent)];
        for (size_t k = 0; k < s->slot->decisions.size(); ++k) {
            const auto& d = s->slot->decisions[k];
            auto dlogits = dists[k].dlogp_dlogits(d.action);
            for (auto& x : dlogits) x *= coeff * inv_n;
            nn::forward(net, inputs[k], ws);  // restore activations for this decision
            nn::backward(net, ws, dlogits, g);
        }
    }
    return total;
}

// ---- trainer ----

struct IterationStats {
    int iteration = 0;
    double episode_reward = 0;
    double mean_delay_s = 0;
    double loss_rate = 0;
    double max_station_energy_j = 0;
    double max_sat_energy_j = 0;
    double lambda_central = 0;
    double mean_lambda_local = 0;
    double actor_loss = 0;
    double critic_loss_reward = 0;
    double critic_loss_central = 0;
    double critic_loss_local_station = 0;
    double critic_loss_local_sat = 0;
};

struct EvalResult {
    std::vector<sim::EpisodeMetrics> episodes;

    double mean_delay_s() const {
        double s = 0;
        for (const auto& e : episodes) s += e.mean_delay_s;
        return episodes.empty() ? 0 : s / static_cast<double>(episodes.size());
    }
    double loss_rate() const {
        double created = 0, dropped = 0;
        for (const auto& e : episodes) {
            created += static_cast<double>(e.created);
            dropped += static_cast<double>(e.dropped);
        }
        return created > 0 ? dropped / created : 0;
    }
};

class Trainer {
  public:
    Trainer(env::Env& e, TrainParams p, Seeds seeds)
        : env_(e),
          p_(p),
          seeds_(seeds),
          policy_rng_(seeds.policy_sample),
          shuffle_rng_(seeds.learner_shuffle) {
        std::mt19937_64 init_rng(seeds.net_init);
        policy_ = Policy::make(e.n_stations(), e.n_sats(), e.k_max(), p_, init_rng);
        lag_.central = 0;
        lag_.local.assign(static_cast<size_t>(e.n_nodes()), 0.0);

        std::vector<int> vsizes{e.global_dim()};
        std::vector<int> lst_sizes{e.station_obs_dim() + e.n_stations()};
        std::vector<int> lsa_sizes{env::Env::sat_obs_dim() + e.n_sats()};
        for (int l = 0; l < p_.hidden_layers; ++l) {
            vsizes.push_back(p_.hidden);
            lst_sizes.push_back(p_.hidden);
            lsa_sizes.push_back(p_.hidden);
        }
        vsizes.push_back(1);
        lst_sizes.push_back(1);
        lsa_sizes.push_back(1);
        critic_reward_ = nn::make_mlp(vsizes, init_rng);
        critic_central_ = nn::make_mlp(vsizes, init_rng);
        critic_local_station_ = nn::make_mlp(lst_sizes, init_rng);
        critic_local_sat_ = nn::make_mlp(lsa_sizes, init_rng);
    }

    Policy& policy() { return policy_; }
    const LagrangeState& lagrange() const { return lag_; }
    LagrangeState& lagrange_mutable() { return lag_; }
    const TrainParams& params() const { return p_; }

    // Per-episode outcomes of the most recent iterate() rollouts.
    struct RolloutRecord {
        uint64_t traffic_seed = 0;
        sim::EpisodeMetrics metrics;
    };
    const std::vector<RolloutRecord>& last_batch() const { return last_batch_; }

    // --- acting ---

    struct ActOut {
        int action = -1;
        double logp = 0;
        bool stochastic = false;
    };

    static ActOut act(const nn::Mlp& net, const std::vector<double>& input,
                      const std::vector<uint8_t>& mask, std::mt19937_64* rng,
                      nn::MlpWorkspace& ws) {
        int n_valid = 0, only = -1;
        for (size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) {
                ++n_valid;
                only = static_cast<int>(i);
            }
        ActOut out;
        if (n_valid == 0) return out;  // no action possible
        if (n_valid == 1) {            // forced move, log-probability exactly 0
            out.action = only;
            return out;
        }
        const auto& logits = nn::forward(net, input, ws);
        auto dist = nn::MaskedCategorical::from(logits, mask);
        out.action = rng ? dist.sample(*rng) : nn::argmax_valid(logits, mask);
        out.logp = dist.log_prob(out.action);
        out.stochastic = true;
        return out;
    }

    // Runs one episode, sampling when `rng` is given and acting greedily
    // otherwise; fills `buf` when provided.
    static sim::EpisodeMetrics run_episode(env::Env& e, const Policy& pol, uint64_t traffic_seed,
                                           std::mt19937_64* rng, EpisodeBuffer* buf) {
        e.reset(traffic_seed);
        nn::MlpWorkspace ws;
        if (buf) buf->slots.clear();
        while (!e.done()) {
            SlotSample slot;
            if (buf) {
                slot.global = e.global_state();
                slot.stations.resize(static_cast<size_t>(e.n_stations()));
                slot.sats.resize(static_cast<size_t>(e.n_sats()));
            }
            std::vector<int> sa(static_cast<size_t>(e.n_stations()) * e.n_stations(), -1);
            std::vector<int> ta(static_cast<size_t>(e.n_sats()) * e.n_stations(), -1);
            for (int j = 0; j < e.n_stations(); ++j) {
                const auto obs = e.station_obs(j);
                const auto mask = e.station_mask(j);
                if (buf) slot.stations[static_cast<size_t>(j)].obs = obs;
                for (int d = 0; d < e.n_stations(); ++d) {
                    if (!e.station_needs_action(j, d)) continue;
                    auto out = act(pol.station_net(j), pol.station_input(j, d, obs), mask, rng, ws);
                    sa[static_cast<size_t>(j) * e.n_stations() + d] = out.action;
                    if (buf && out.stochastic)
                        slot.stations[static_cast<size_t>(j)].decisions.push_back(
                            {d, out.action, out.logp, mask});
                }
            }
            for (int s = 0; s < e.n_sats(); ++s) {
                const auto obs = e.sat_obs(s);
                if (buf) slot.sats[static_cast<size_t>(s)].obs = obs;
                for (int d = 0; d < e.n_stations(); ++d) {
                    const auto mask = e.sat_mask(s, d);
                    auto out = act(pol.sat_net(s), pol.sat_input(s, d, obs), mask, rng, ws);
                    ta[static_cast<size_t>(s) * e.n_stations() + d] = out.action;
                    if (buf && out.stochastic)
                        slot.sats[static_cast<size_t>(s)].decisions.push_back(
                            {d, out.action, out.logp, mask});
                }
            }
            auto r = e.step(sa, ta);
            if (buf) {
                slot.reward = r.reward;
                slot.central_cost = r.central_cost;
                slot.local_costs = r.local_costs;
                slot.sim = std::move(r.metrics);
                buf->slots.push_back(std::move(slot));
            }
        }
        auto m = e.finalize();
        if (buf) buf->metrics = m;
        return m;
    }

    // --- one training iteration: rollouts, returns, actor step, dual step,
    // critic fit ---

    IterationStats iterate() {
        ++iteration_;
        std::vector<EpisodeBuffer> batch(static_cast<size_t>(p_.episodes_per_batch));
        last_batch_.clear();
        for (auto& buf : batch) {
            const uint64_t seed = next_traffic_seed();
            run_episode(env_, policy_, seed, &policy_rng_, &buf);
            last_batch_.push_back({seed, buf.metrics});
        }

        // discounted-to-go targets and critic-based advantages
        nn::MlpWorkspace ws;
        std::vector<ActorSample> samples;
        std::vector<std::vector<double>> vr_x, vc_x, lst_x, lsa_x;
        std::vector<double> vr_y, vc_y, lst_y, lsa_y;
        const int n_st = env_.n_stations(), n_nodes = env_.n_nodes();

        for (auto& buf : batch) {
            const size_t W = buf.slots.size();
            std::vector<double> rewards(W), drops(W);
            for (size_t t = 0; t < W; ++t) {
                rewards[t] = buf.slots[t].reward;
                drops[t] = buf.slots[t].central_cost;
            }
            const auto r2g = discounted_to_go(rewards, p_.gamma);
            const auto c2g = discounted_to_go(drops, p_.gamma);
            std::vector<std::vector<double>> l2g(static_cast<size_t>(n_nodes));
            for (int v = 0; v < n_nodes; ++v) {
                std::vector<double> lc(W);
                for (size_t t = 0; t < W; ++t) lc[t] = buf.slots[t].local_costs[static_cast<size_t>(v)];
                l2g[static_cast<size_t>(v)] = discounted_to_go(lc, p_.gamma);
            }
            for (size_t t = 0; t < W; ++t) {
                auto& slot = buf.slots[t];
                const double vr = nn::forward(critic_reward_, slot.global, ws)[0] * p_.reward_scale;
                const double adv_r = r2g[t] - vr;
                const double adv_c =
                    c2g[t] / p_.drop_scale - nn::forward(critic_central_, slot.global, ws)[0];
                vr_x.push_back(slot.global);
                vr_y.push_back(r2g[t] / p_.reward_scale);
                vc_x.push_back(slot.global);
                vc_y.push_back(c2g[t] / p_.drop_scale);
                auto add_agent = [&](int cls, int agent, AgentSlot& as) {
                    const int node = cls == 0 ? agent : n_st + agent;
                    std::vector<double> lin = as.obs;
                    Policy::append_onehot(lin, agent, cls == 0 ? n_st : env_.n_sats());
                    auto& lx = cls == 0 ? lst_x : lsa_x;
                    auto& ly = cls == 0 ? lst_y : lsa_y;
                    const double target = l2g[static_cast<size_t>(node)][t];
                    lx.push_back(lin);
                    ly.push_back(target / p_.energy_scale);
                    if (as.decisions.empty()) return;
                    auto& cl = cls == 0 ? critic_local_station_ : critic_local_sat_;
                    const double vl = nn::forward(cl, lin, ws)[0];
                    ActorSample smp;
                    smp.cls = cls;
                    smp.agent = agent;
                    smp.node = node;
                    smp.slot = &as;
                    smp.adv_reward = adv_r;
                    smp.adv_central = adv_c;
                    smp.adv_local = target / p_.energy_scale - vl;
                    samples.push_back(smp);
                };
                for (int j = 0; j < n_st; ++j) add_agent(0, j, slot.stations[static_cast<size_t>(j)]);
                for (int s = 0; s < env_.n_sats(); ++s) add_agent(1, s, slot.sats[static_cast<size_t>(s)]);
            }
        }

        // normalize the reward advantages only
        if (!samples.empty()) {
            double mean = 0;
            for (const auto& s : samples) mean += s.adv_reward;
            mean /= static_cast<double>(samples.size());
            double var = 0;
            for (const auto& s : samples) var += (s.adv_reward - mean) * (s.adv_reward - mean);
            const double sd = std::sqrt(var / static_cast<double>(samples.size()));
            for (auto& s : samples) s.adv_reward = (s.adv_reward - mean) / (sd + 1e-8);
        }

        IterationStats st;
        st.iteration = iteration_;
        st.actor_loss = update_actors(samples);
        update_multipliers(batch, samples);
        st.critic_loss_reward = fit_critic(critic_reward_, adam_vr_, vr_x, vr_y);
        st.critic_loss_central = fit_critic(critic_central_, adam_vc_, vc_x, vc_y);
        st.critic_loss_local_station = fit_critic(critic_local_station_, adam_lst_, lst_x, lst_y);
        st.critic_loss_local_sat = fit_critic(critic_local_sat_, adam_lsa_, lsa_x, lsa_y);

        double rew = 0, delay = 0, loss = 0;
        double max_st_e = 0, max_sa_e = 0;
        for (const auto& buf : batch) {
            rew += buf.metrics.total_reward;
            delay += buf.metrics.mean_delay_s;
            loss += buf.metrics.loss_rate;
            for (int v = 0; v < n_nodes; ++v) {
                const double e = buf.metrics.node_energy_j[static_cast<size_t>(v)];
                if (v < n_st) max_st_e = std::max(max_st_e, e);
                else max_sa_e = std::max(max_sa_e, e);
            }
        }
        const double ne = static_cast<double>(batch.size());
        st.episode_reward = rew / ne;
        st.mean_delay_s = delay / ne;
        st.loss_rate = loss / ne;
        st.max_station_energy_j = max_st_e;
        st.max_sat_energy_j = max_sa_e;
        st.lambda_central = lag_.central;
        double lsum = 0;
        for (double l : lag_.local) lsum += l;
        st.mean_lambda_local = lsum / static_cast<double>(lag_.local.size());
        return st;
    }

    void train(int iterations, const std::function<void(const IterationStats&)>& on_iter = nullptr,
               const std::function<void(int)>& on_checkpoint = nullptr) {
        for (int k = 0; k < iterations; ++k) {
            auto st = iterate();
            if (on_iter) on_iter(st);
            if (on_checkpoint && p_.checkpoint_every > 0 && (k + 1) % p_.checkpoint_every == 0)
                on_checkpoint(k + 1);
        }
    }

    // Greedy evaluation on an arbitrary (possibly perturbed) environment.
    static EvalResult evaluate(env::Env& e, const Policy& pol, uint64_t traffic_seed_base,
                               int episodes) {
        EvalResult out;
        for (int k = 0; k < episodes; ++k)
            out.episodes.push_back(
                run_episode(e, pol, traffic_seed_base + static_cast<uint64_t>(k), nullptr, nullptr));
        return out;
    }

    // --- checkpointing (policy, critics, duals, shape metadata) ---

    void save(const std::string& base) const {
        nlohmann::json extra;
        extra["iteration"] = iteration_;
        extra["lambda_central"] = lag_.central;
        extra["lambda_local"] = lag_.local;
        extra["ablation"] = ablation_name(p_.ablation);
        extra["n_stations"] = env_.n_stations();
        extra["n_sats"] = env_.n_sats();
        extra["k_max"] = env_.k_max();
        std::vector<std::pair<std::string, const nn::Mlp*>> nets;
        for (size_t i = 0; i < policy_.station_nets.size(); ++i)
            nets.emplace_back("actor_station_" + std::to_string(i), &policy_.station_nets[i]);
        for (size_t i = 0; i < policy_.sat_nets.size(); ++i)
            nets.emplace_back("actor_sat_" + std::to_string(i), &policy_.sat_nets[i]);
        nets.emplace_back("critic_reward", &critic_reward_);
        nets.emplace_back("critic_central", &critic_central_);
        nets.emplace_back("critic_local_station", &critic_local_station_);
        nets.emplace_back("critic_local_sat", &critic_local_sat_);
        nlohmann::json meta;
        meta["policy"] = {{"shared", policy_.shared},
                          {"base_stations", policy_.base_stations},
                          {"base_sats", policy_.base_sats},
                          {"k_max", policy_.k_max},
                          {"station_obs_dim", policy_.station_obs_dim},
                          {"n_station_nets", policy_.station_nets.size()},
                          {"n_sat_nets", policy_.sat_nets.size()}};
        for (auto& [k, v] : extra.items()) meta[k] = v;
        nn::checkpoint_save(base, nets, meta);
    }

    void load(const std::string& base) {
        std::vector<std::pair<std::string, nn::Mlp*>> nets;
        for (size_t i = 0; i < policy_.station_nets.size(); ++i)
            nets.emplace_back("actor_station_" + std::to_string(i), &policy_.station_nets[i]);
        for (size_t i = 0; i < policy_.sat_nets.size(); ++i)
            nets.emplace_back("actor_sat_" + std::to_string(i), &policy_.sat_nets[i]);
        nets.emplace_back("critic_reward", &critic_reward_);
        nets.emplace_back("critic_central", &critic_central_);
        nets.emplace_back("critic_local_station", &critic_local_station_);
        nets.emplace_back("critic_local_sat", &critic_local_sat_);
        auto extra = nn::checkpoint_load(base, nets);
        iteration_ = extra.at("iteration").get<int>();
        lag_.central = extra.at("lambda_central").get<double>();
        lag_.local = extra.at("lambda_local").get<std::vector<double>>();
    }

  private:
    uint64_t next_traffic_seed() { return seeds_.traffic + static_cast<uint64_t>(episode_counter_++); }

    double update_actors(std::vector<ActorSample>& samples) {
        if (samples.empty()) return 0.0;
        ActorGrads grads;
        grads.match(policy_);
        std::vector<const ActorSample*> order;
        order.reserve(samples.size());
        for (const auto& s : samples) order.push_back(&s);
        const int mb = std::max(1, std::min<int>(p_.minibatch, static_cast<int>(order.size())));
        double loss_sum = 0;
        int n_updates = 0;
        for (int epoch = 0; epoch < p_.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), shuffle_rng_);
            for (size_t at = 0; at < order.size(); at += static_cast<size_t>(mb)) {
                std::vector<const ActorSample*> batch(
                    order.begin() + static_cast<std::ptrdiff_t>(at),
                    order.begin() + static_cast<std::ptrdiff_t>(
                                        std::min(order.size(), at + static_cast<size_t>(mb))));
                grads.zero();
                const double obj =
                    actor_objective(policy_, batch, lag_, p_.clip_eps, p_.ablation, &grads);
                for (size_t i = 0; i < policy_.station_nets.size(); ++i)
                    nn::adam_step(policy_.station_nets[i], grads.station[i], adam_station(i),
                                  p_.lr_actor, +1.0);
                for (size_t i = 0; i < policy_.sat_nets.size(); ++i)
                    nn::adam_step(policy_.sat_nets[i], grads.sat[i], adam_sat(i), p_.lr_actor, +1.0);
                loss_sum += obj;
                ++n_updates;
            }
        }
        return n_updates > 0 ? loss_sum / n_updates : 0.0;
    }

    void update_multipliers(const std::vector<EpisodeBuffer>& batch,
                            const std::vector<ActorSample>& samples) {
        const int n_nodes = env_.n_nodes();
        double mean_adv_c = 0;
        std::vector<double> mean_adv_l(static_cast<size_t>(n_nodes), 0.0);
        std::vector<int> count_l(static_cast<size_t>(n_nodes), 0);
        if (!samples.empty()) {
            for (const auto& s : samples) {
                mean_adv_c += s.adv_central;
                mean_adv_l[static_cast<size_t>(s.node)] += s.adv_local;
                ++count_l[static_cast<size_t>(s.node)];
            }
            mean_adv_c /= static_cast<double>(samples.size());
        }
        double mean_drops = 0;
        std::vector<double> mean_energy(static_cast<size_t>(n_nodes), 0.0);
        for (const auto& buf : batch) {
            mean_drops += static_cast<double>(buf.metrics.dropped);
            for (int v = 0; v < n_nodes; ++v)
                mean_energy[static_cast<size_t>(v)] += buf.metrics.node_energy_j[static_cast<size_t>(v)];
        }
        const double ne = static_cast<double>(batch.size());
        mean_drops /= ne;
        for (auto& x : mean_energy) x /= ne;

        // budget gaps are stepped in the same scaled units as the cost
        // advantages, keeping the multipliers O(1)
        lag_.central = multiplier_step(lag_.central, p_.lr_lambda,
                                       multiplier_delta(mean_adv_c, mean_drops / p_.drop_scale,
                                                        env_.drop_budget() / p_.drop_scale,
                                                        p_.gamma));
        for (int v = 0; v < n_nodes; ++v) {
            const double adv = count_l[static_cast<size_t>(v)] > 0
                                   ? mean_adv_l[static_cast<size_t>(v)] / count_l[static_cast<size_t>(v)]
                                   : 0.0;
            lag_.local[static_cast<size_t>(v)] = multiplier_step(
                lag_.local[static_cast<size_t>(v)], p_.lr_lambda,
                multiplier_delta(adv, mean_energy[static_cast<size_t>(v)] / p_.energy_scale,
                                 env_.energy_budget(v) / p_.energy_scale, p_.gamma));
        }
    }

    double fit_critic(nn::Mlp& net, nn::AdamState& adam, const std::vector<std::vector<double>>& X,
                      const std::vector<double>& y) {
        return fit_value_net(net, adam, X, y, p_.epochs, p_.minibatch, p_.lr_critic, shuffle_rng_);
    }

    nn::AdamState& adam_station(size_t i) {
        if (adam_station_.size() <= i) adam_station_.resize(i + 1);
        return adam_station_[i];
    }
    nn::AdamState& adam_sat(size_t i) {
        if (adam_sat_.size() <= i) adam_sat_.resize(i + 1);
        return adam_sat_[i];
    }

    env::Env& env_;
    TrainParams p_;
    Seeds seeds_;
    std::mt19937_64 policy_rng_;
    std::mt19937_64 shuffle_rng_;
    Policy policy_;
    LagrangeState lag_;
    nn::Mlp critic_reward_, critic_central_, critic_local_station_, critic_local_sat_;
    nn::AdamState adam_vr_, adam_vc_, adam_lst_, adam_lsa_;
    std::vector<nn::AdamState> adam_station_, adam_sat_;
    int iteration_ = 0;
    int64_t episode_counter_ = 0;
    std::vector<RolloutRecord> last_batch_;
};

}  // namespace istn::cmadr
