#pragma once

// Multi-agent environment wrapper around the packet simulator. Each slot,
// every ground station picks an uplink satellite per destination and every
// satellite picks one of its four grid neighbors or the downlink per
// destination; the joint choice compiles into a routing table for that slot.
// Rewards, a shared drop cost, and per-node energy costs come back per slot.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "istn/geometry.hpp"
#include "istn/sim.hpp"

namespace istn::env {

// Satellite action head layout: the four grid directions in snapshot order,
// then the downlink toward the packet's destination station.
inline constexpr int kSatActions = 5;
inline constexpr int kDownlinkAction = 4;

struct EnvConfig {
    geom::ConstellationConfig constellation;
    std::vector<geom::GroundStation> stations;
    int num_slots = 0;
    double slot_duration_s = 0;
    sim::SimParams sim;
    sim::TrafficSpec traffic;

    double station_energy_budget_j = 10000;  // per-station episode budget
    double sat_energy_budget_j = 10000;      // per-satellite episode budget
    double loss_rate_budget = 0.01;          // dropped / created

    // Evaluation-time shape freezing and perturbations.
    int k_max_override = -1;        // keep the trained uplink head width
    std::vector<int> removed_sats;  // satellite indices taken out of service
    int added_stations = 0;         // extra stations at seeded coordinates
    uint64_t added_station_seed = 0;
};

struct StepResult {
    double reward = 0;                // mean ground-track progress rate (m/s)
    double central_cost = 0;          // packets dropped this slot
    std::vector<double> local_costs;  // per-node transmit energy this slot (J)
    sim::SlotMetrics metrics;
};

class Env {
  public:
    explicit Env(EnvConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.num_slots < 1) throw std::invalid_argument("env: num_slots must be positive");
        if (cfg_.slot_duration_s <= 0)
            throw std::invalid_argument("env: slot_duration_s must be positive");
        cfg_.constellation.validate();
        if (cfg_.added_stations > 0) {
            std::mt19937_64 rng(cfg_.added_station_seed);
            std::uniform_real_distribution<double> lat(-60.0, 60.0);
            std::uniform_real_distribution<double> lon(-180.0, 180.0);
            for (int k = 0; k < cfg_.added_stations; ++k) {
                geom::GroundStation g;
                g.id = static_cast<int>(cfg_.stations.size());
                g.lat_deg = lat(rng);
                g.lon_deg = lon(rng);
                cfg_.stations.push_back(g);
            }
        }
        n_stations_ = static_cast<int>(cfg_.stations.size());
        n_sats_ = cfg_.constellation.num_sats();
        if (n_stations_ < 2) throw std::invalid_argument("env: need at least two stations");

        std::vector<uint8_t> removed;
        if (!cfg_.removed_sats.empty()) {
            removed.assign(static_cast<size_t>(n_sats_), 0);
            for (int s : cfg_.removed_sats) {
                if (s < 0 || s >= n_sats_)
                    throw std::invalid_argument("env: removed satellite index out of range");
                removed[static_cast<size_t>(s)] = 1;
            }
        }
        snapshots_.reserve(static_cast<size_t>(cfg_.num_slots));
        for (int t = 1; t <= cfg_.num_slots; ++t)
            snapshots_.push_back(geom::snapshot(cfg_.constellation, cfg_.stations, t,
                                                cfg_.slot_duration_s, removed));

        int widest = 0;
        for (const auto& snap : snapshots_)
            for (int j = 0; j < n_stations_; ++j)
                widest = std::max(widest,
                                  static_cast<int>(snap.uplink_sets[static_cast<size_t>(j)].size()));
        k_max_ = cfg_.k_max_override >= 0 ? cfg_.k_max_override : widest;
        if (k_max_ < 1) throw std::invalid_argument("env: no station ever sees a satellite");

        net_ = std::make_unique<sim::Network>(n_stations_, n_sats_, cfg_.sim,
                                              cfg_.slot_duration_s, cfg_.traffic);
        reset(0);
    }

    int n_stations() const { return n_stations_; }
    int n_sats() const { return n_sats_; }
    int n_nodes() const { return n_stations_ + n_sats_; }
    int k_max() const { return k_max_; }
    int num_slots() const { return cfg_.num_slots; }
    double slot_duration_s() const { return cfg_.slot_duration_s; }
    const EnvConfig& config() const { return cfg_; }
    const std::vector<geom::TopologySnapshot>& snapshots() const { return snapshots_; }
    bool sat_alive(int s) const { return snapshots_.front().sat_alive(s); }

    // Expected packet volume per episode; scales the loss budget into counts.
    double expected_packets() const {
        return cfg_.traffic.rate_per_station_per_slot * n_stations_ * cfg_.num_slots;
    }
    double drop_budget() const { return cfg_.loss_rate_budget * expected_packets(); }
    double energy_budget(int node) const {
        return node < n_stations_ ? cfg_.station_energy_budget_j : cfg_.sat_energy_budget_j;
    }

    int station_obs_dim() const { return 1 + 3 * k_max_; }
    static constexpr int sat_obs_dim() { return 10; }
    int global_dim() const { return 1 + 2 * (n_stations_ + n_sats_); }

    void reset(uint64_t traffic_seed) {
        net_->reset(traffic_seed);
        slot_ = 0;
        energy_used_.assign(static_cast<size_t>(n_nodes()), 0.0);
        queue_len_.assign(static_cast<size_t>(n_nodes()), 0);
    }

    bool done() const { return slot_ >= cfg_.num_slots; }

    // --- observations for the upcoming slot ---

    // [own energy fraction] then per visible-satellite slot k < K_max:
    // (sat energy fraction, sat buffer fraction, availability bit).
    std::vector<double> station_obs(int j) const {
        const auto& snap = upcoming();
        std::vector<double> obs(static_cast<size_t>(station_obs_dim()), 0.0);
        obs[0] = energy_frac(j);
        const auto& up = snap.uplink_sets[static_cast<size_t>(j)];
        const int n = std::min(static_cast<int>(up.size()), k_max_);
        for (int k = 0; k < n; ++k) {
            const int node = n_stations_ + up[static_cast<size_t>(k)];
            obs[static_cast<size_t>(1 + 3 * k)] = energy_frac(node);
            obs[static_cast<size_t>(2 + 3 * k)] = buffer_frac(node);
            obs[static_cast<size_t>(3 + 3 * k)] = 1.0;
        }
        return obs;
    }

    // Own (energy, buffer) then the four grid neighbors' pairs, zeros for
    // removed neighbors.
    std::vector<double> sat_obs(int s) const {
        const auto& snap = upcoming();
        std::vector<double> obs(static_cast<size_t>(sat_obs_dim()), 0.0);
        const int node = n_stations_ + s;
        obs[0] = energy_frac(node);
        obs[1] = buffer_frac(node);
        const auto& nbr = snap.neighbor_sets[static_cast<size_t>(s)];
        for (int d = 0; d < 4; ++d) {
            if (nbr[static_cast<size_t>(d)] < 0) continue;
            const int nn = n_stations_ + nbr[static_cast<size_t>(d)];
            obs[static_cast<size_t>(2 + 2 * d)] = energy_frac(nn);
            obs[static_cast<size_t>(3 + 2 * d)] = buffer_frac(nn);
        }
        return obs;
    }

    // [slot fraction] then (energy, buffer) fractions for every node,
    // stations first.
    std::vector<double> global_state() const {
        std::vector<double> g(static_cast<size_t>(global_dim()), 0.0);
        g[0] = static_cast<double>(slot_) / cfg_.num_slots;
        for (int v = 0; v < n_nodes(); ++v) {
            g[static_cast<size_t>(1 + 2 * v)] = energy_frac(v);
            g[static_cast<size_t>(2 + 2 * v)] = buffer_frac(v);
        }
        return g;
    }

    // --- action masks for the upcoming slot ---

    // Bit k set iff the station's sorted visible list has a k-th entry.
    std::vector<uint8_t> station_mask(int j) const {
        const auto& snap = upcoming();
        std::vector<uint8_t> m(static_cast<size_t>(k_max_), 0);
        const int n = std::min(static_cast<int>(snap.uplink_sets[static_cast<size_t>(j)].size()),
                               k_max_);
        for (int k = 0; k < n; ++k) m[static_cast<size_t>(k)] = 1;
        return m;
    }

    // Grid directions with live neighbors are valid; when the destination
    // station is visible the downlink becomes the only valid action.
    std::vector<uint8_t> sat_mask(int s, int dst_station) const {
        const auto& snap = upcoming();
        std::vector<uint8_t> m(static_cast<size_t>(kSatActions), 0);
        if (!snap.sat_alive(s)) return m;
        if (snap.station_visible_from(s, dst_station)) {
            m[kDownlinkAction] = 1;
            return m;
        }
        const auto& nbr = snap.neighbor_sets[static_cast<size_t>(s)];
        for (int d = 0; d < 4; ++d)
            if (nbr[static_cast<size_t>(d)] >= 0) m[static_cast<size_t>(d)] = 1;
        return m;
    }

    // Stations act for every destination other than themselves whenever any
    // satellite is visible.
    bool station_needs_action(int j, int dst) const {
        if (j == dst) return false;
        return !upcoming().uplink_sets[static_cast<size_t>(j)].empty();
    }

    bool sat_needs_action(int s, int dst) const {
        const auto m = sat_mask(s, dst);
        for (uint8_t b : m)
            if (b) return true;
        return false;
    }

    // --- transition ---

    // Actions are flattened [agent * n_stations + dst]; -1 means "no action"
    // and is legal only where the mask is empty (or dst == self for a
    // station). Anything else inconsistent with the masks throws.
    StepResult step(const std::vector<int>& station_actions,
                    const std::vector<int>& sat_actions) {
        if (done()) throw std::logic_error("env: episode already finished");
        if (station_actions.size() != static_cast<size_t>(n_stations_) * n_stations_ ||
            sat_actions.size() != static_cast<size_t>(n_sats_) * n_stations_)
            throw std::invalid_argument("env: action array shape mismatch");
        const auto& snap = upcoming();
        sim::RoutingTable table(n_stations_, n_sats_);

        for (int j = 0; j < n_stations_; ++j) {
            const auto& up = snap.uplink_sets[static_cast<size_t>(j)];
            const int n_vis = std::min(static_cast<int>(up.size()), k_max_);
            for (int d = 0; d < n_stations_; ++d) {
                const int a = station_actions[static_cast<size_t>(j) * n_stations_ + d];
                if (j == d || n_vis == 0) {
                    if (a != -1) throw std::logic_error("env: station action where none is due");
                    continue;
                }
                if (a < 0 || a >= n_vis)
                    throw std::logic_error("env: station action violates mask");
                table.set(j, d, n_stations_ + up[static_cast<size_t>(a)]);
            }
        }

        for (int s = 0; s < n_sats_; ++s) {
            const int node = n_stations_ + s;
            const auto& nbr = snap.neighbor_sets[static_cast<size_t>(s)];
            for (int d = 0; d < n_stations_; ++d) {
                const int a = sat_actions[static_cast<size_t>(s) * n_stations_ + d];
                if (!snap.sat_alive(s)) {
                    if (a != -1) throw std::logic_error("env: action for removed satellite");
                    continue;
                }
                if (snap.station_visible_from(s, d)) {
                    if (a != kDownlinkAction)
                        throw std::logic_error("env: downlink is forced when destination visible");
                    table.set(node, d, d);
                    continue;
                }
                if (a == -1) {
                    for (int dir = 0; dir < 4; ++dir)
                        if (nbr[static_cast<size_t>(dir)] >= 0)
                            throw std::logic_error("env: satellite action missing");
                    continue;
                }
                if (a < 0 || a >= 4 || nbr[static_cast<size_t>(a)] < 0)
                    throw std::logic_error("env: satellite action violates mask");
                table.set(node, d, n_stations_ + nbr[static_cast<size_t>(a)]);
            }
        }

        StepResult r;
        r.metrics = net_->step_slot(snap, table);
        r.reward = r.metrics.reward_mps;
        r.central_cost = static_cast<double>(r.metrics.dropped);
        r.local_costs = r.metrics.node_energy_j;
        for (int v = 0; v < n_nodes(); ++v) {
            energy_used_[static_cast<size_t>(v)] += r.metrics.node_energy_j[static_cast<size_t>(v)];
            queue_len_[static_cast<size_t>(v)] = r.metrics.queue_len_end[static_cast<size_t>(v)];
        }
        ++slot_;
        return r;
    }

    sim::EpisodeMetrics finalize() { return net_->finalize(); }

    double energy_used(int node) const { return energy_used_[static_cast<size_t>(node)]; }

  private:
    const geom::TopologySnapshot& upcoming() const {
        return snapshots_[static_cast<size_t>(std::min(slot_, cfg_.num_slots - 1))];
    }
    double energy_frac(int node) const {
        const double b = energy_budget(node);
        return std::min(1.0, energy_used_[static_cast<size_t>(node)] / b);
    }
    double buffer_frac(int node) const {
        const int cap = node < n_stations_ ? cfg_.sim.station_buffer_capacity
                                           : cfg_.sim.sat_buffer_capacity;
        if (cap <= 0) return 0.0;  // unbounded buffers read as empty
        return std::min(1.0, static_cast<double>(queue_len_[static_cast<size_t>(node)]) / cap);
    }

    EnvConfig cfg_;
    int n_stations_ = 0, n_sats_ = 0, k_max_ = 0;
    std::vector<geom::TopologySnapshot> snapshots_;
    std::unique_ptr<sim::Network> net_;
    int slot_ = 0;
    std::vector<double> energy_used_;
    std::vector<int> queue_len_;
};

}  // namespace istn::env
