#pragma once

// Packet-level network simulator. Within a slot the topology is frozen; an
// event queue moves packets hop by hop under the slot's routing table. Every
// node is a single-server FIFO queue: it serves its head-of-line packet, one
// transmission at a time, which also serializes each outgoing link. Services
// begun before a slot boundary complete under the old link parameters;
// packets still queued re-route under the next slot's table.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <queue>
#include <random>
#include <stdexcept>
#include <vector>

#include "istn/geometry.hpp"
#include "istn/link.hpp"

namespace istn::sim {

// Node ids: stations occupy [0, n_stations), satellite s maps to n_stations + s.
struct RoutingTable {
    int n_stations = 0;
    int n_nodes = 0;
    std::vector<int> next;  // flattened [node][dst_station], -1 = no route

    RoutingTable() = default;
    RoutingTable(int stations, int sats)
        : n_stations(stations),
          n_nodes(stations + sats),
          next(static_cast<size_t>(n_nodes) * static_cast<size_t>(stations), -1) {}

    int get(int node, int dst) const {
        return next[static_cast<size_t>(node) * static_cast<size_t>(n_stations) +
                    static_cast<size_t>(dst)];
    }
    void set(int node, int dst, int hop) {
        next[static_cast<size_t>(node) * static_cast<size_t>(n_stations) +
             static_cast<size_t>(dst)] = hop;
    }
};

struct HopRecord {
    int node = -1;
    double arrival_s = 0;
    double service_start_s = -1;
    double departure_s = -1;
};

struct Packet {
    int64_t id = -1;
    int src_station = -1;
    int dst_station = -1;
    double created_s = 0;
    double delivered_s = -1;
    bool dropped = false;
    int position_node = -1;   // node currently holding (or last holding) the packet
    double node_arrival_s = 0;
    double d_queue_s = 0, d_proc_s = 0, d_tx_s = 0, d_prop_s = 0;
    double energy_j = 0;      // total transmit energy spent on this packet
    std::vector<HopRecord> hops;

    bool terminal() const { return delivered_s >= 0 || dropped; }
    double total_delay_s() const { return delivered_s - created_s; }
};

struct SimParams {
    link::RfParams rf;
    link::FsoParams fso;
    double packet_bits = 64e3;          // L_P
    double prop_speed_mps = 3e8;        // H
    double processing_delay_s = 1e-3;   // D_L per forwarding hop
    int sat_buffer_capacity = 10000;    // B_M, packets (waiting + in service)
    int station_buffer_capacity = -1;   // -1 = unbounded
};

struct TrafficSpec {
    double rate_per_station_per_slot = 0;  // Poisson mean
};

// Packet progress sample for the slot reward: ground-track distance to the
// destination at slot start vs. slot end.
struct RewardInput {
    int dst = -1;
    int start_node = -1;
    int end_node = -1;
    uint8_t terminal = 0;  // 0 live, 1 delivered, 2 dropped
};

struct SlotMetrics {
    int slot = 0;
    int64_t created = 0, delivered = 0, dropped = 0;
    double sum_delivered_delay_s = 0;
    double reward_mps = 0;
    int64_t held_no_route = 0;
    std::vector<double> node_energy_j;  // this slot, per node
    std::vector<int> node_drops;        // this slot, per node
    std::vector<int> queue_len_end;     // occupancy at slot end, per node
    std::vector<RewardInput> reward_inputs;
};

struct EpisodeMetrics {
    double total_reward = 0;
    int64_t created = 0, delivered = 0, dropped = 0, leftover = 0;
    double mean_delay_s = 0;  // over delivered packets
    double loss_rate = 0;     // satellite drops / created
    int64_t held_no_route = 0;
    std::vector<double> node_energy_j;  // episode totals
    double lambda_c = 0;                // filled by training contexts
    double lambda_local_norm = 0;
};

// Ground-track distance from a node to a destination station, meters.
inline double node_ground_distance(const geom::TopologySnapshot& snap, int node,
                                   int dst_station, int n_stations) {
    const auto& dst = snap.station_positions[static_cast<size_t>(dst_station)];
    if (node < n_stations)
        return geom::great_circle_m(snap.station_positions[static_cast<size_t>(node)], dst,
                                    snap.earth_radius_m);
    return geom::great_circle_m(snap.sat_positions[static_cast<size_t>(node - n_stations)],
                                dst, snap.earth_radius_m);
}

// Mean ground-track progress rate (m/s) over packets present during the slot.
inline double slot_reward(const geom::TopologySnapshot& snap,
                          const std::vector<RewardInput>& inputs, double slot_duration_s,
                          int n_stations) {
    if (inputs.empty()) return 0.0;
    double sum = 0;
    for (const auto& in : inputs) {
        const double start = node_ground_distance(snap, in.start_node, in.dst, n_stations);
        const double end = in.terminal == 1
                               ? 0.0
                               : node_ground_distance(snap, in.end_node, in.dst, n_stations);
        sum += start - end;
    }
    return sum / static_cast<double>(inputs.size()) / slot_duration_s;
}

class Network {
public:
    Network(int n_stations, int n_sats, SimParams params, double slot_duration_s,
            TrafficSpec traffic)
        : n_stations_(n_stations),
          n_sats_(n_sats),
          params_(params),
          slot_duration_s_(slot_duration_s),
          traffic_(traffic) {
        if (n_stations < 1 || n_sats < 1)
            throw std::invalid_argument("Network: need at least one station and satellite");
        if (slot_duration_s <= 0)
            throw std::invalid_argument("Network: slot duration must be > 0");
        reset(0);
    }

    void reset(uint64_t traffic_seed) {
        nodes_.assign(static_cast<size_t>(n_nodes()), NodeState{});
        packets_.clear();
        live_.clear();
        events_ = {};
        seq_ = 0;
        slot_ = 0;
        created_ = delivered_ = dropped_sat_ = dropped_station_ = held_total_ = 0;
        sum_delivered_delay_ = 0;
        total_reward_ = 0;
        rng_.seed(traffic_seed);
    }

    int n_nodes() const { return n_stations_ + n_sats_; }
    int n_stations() const { return n_stations_; }
    int n_sats() const { return n_sats_; }
    double slot_duration_s() const { return slot_duration_s_; }
    const SimParams& params() const { return params_; }
    const std::vector<Packet>& packets() const { return packets_; }

    // Hand-inject one packet (tests / crafted scenarios). The creation time
    // must fall inside the next slot to be stepped.
    int64_t inject(int src_station, int dst_station, double created_s) {
        const double lo = slot_ * slot_duration_s_, hi = (slot_ + 1) * slot_duration_s_;
        if (created_s < lo || created_s >= hi)
            throw std::invalid_argument("inject: creation time outside the upcoming slot");
        if (src_station < 0 || src_station >= n_stations_ || dst_station < 0 ||
            dst_station >= n_stations_ || src_station == dst_station)
            throw std::invalid_argument("inject: bad endpoints");
        Packet p;
        p.id = static_cast<int64_t>(packets_.size());
        p.src_station = src_station;
        p.dst_station = dst_station;
        p.created_s = created_s;
        p.position_node = src_station;
        packets_.push_back(p);
        live_.push_back(p.id);
        ++created_;
        push_event(created_s, Event::Arrive, src_station, p.id);
        return p.id;
    }

    int64_t created() const { return created_; }
    int64_t delivered() const { return delivered_; }
    int64_t dropped() const { return dropped_sat_; }
    int64_t live_count() const { return created_ - delivered_ - dropped_sat_ - dropped_station_; }

    double node_energy_total_j(int node) const {
        return nodes_[static_cast<size_t>(node)].energy_total_j;
    }
    int node_occupancy(int node) const {
        const auto& n = nodes_[static_cast<size_t>(node)];
        return static_cast<int>(n.queue.size()) + (n.busy ? 1 : 0);
    }
    int node_max_occupancy(int node) const {
        return nodes_[static_cast<size_t>(node)].max_occupancy;
    }

    // Advance one slot. snap.slot_index must be the next slot (1-based).
    SlotMetrics step_slot(const geom::TopologySnapshot& snap, const RoutingTable& table) {
        if (snap.slot_index != slot_ + 1)
            throw std::logic_error("step_slot: snapshot out of sequence");
        if (table.n_stations != n_stations_ || table.n_nodes != n_nodes())
            throw std::logic_error("step_slot: routing table shape mismatch");
        slot_ = snap.slot_index;
        snap_ = &snap;
        table_ = &table;
        const double slot_start = (slot_ - 1) * slot_duration_s_;
        const double slot_end = slot_ * slot_duration_s_;

        SlotMetrics m;
        m.slot = slot_;
        m.node_energy_j.assign(static_cast<size_t>(n_nodes()), 0.0);
        m.node_drops.assign(static_cast<size_t>(n_nodes()), 0);
        slot_metrics_ = &m;

        // live packets present at slot start
        std::erase_if(live_, [&](int64_t id) {
            return packets_[static_cast<size_t>(id)].terminal();
        });
        m.reward_inputs.reserve(live_.size());
        for (int64_t id : live_) {
            const auto& p = packets_[static_cast<size_t>(id)];
            m.reward_inputs.push_back({p.dst_station, p.position_node, -1, 0});
            reward_index_.push_back(id);
        }

        generate_traffic(slot_start, slot_end, m);

        // nodes stalled at the previous boundary get a fresh look at the new table
        for (int v = 0; v < n_nodes(); ++v) {
            auto& n = nodes_[static_cast<size_t>(v)];
            if (!n.busy && !n.queue.empty()) try_start(v, slot_start);
        }

        while (!events_.empty() && events_.top().time < slot_end) {
            Event ev = events_.top();
            events_.pop();
            if (ev.type == Event::Arrive)
                handle_arrival(ev.packet, ev.node, ev.time);
            else
                handle_node_free(ev.node, ev.time);
        }

        // close out reward inputs with end-of-slot positions
        for (size_t k = 0; k < m.reward_inputs.size(); ++k) {
            const auto& p = packets_[static_cast<size_t>(reward_index_[k])];
            auto& in = m.reward_inputs[k];
            in.end_node = p.position_node;
            in.terminal = p.delivered_s >= 0 ? 1 : (p.dropped ? 2 : 0);
        }
        reward_index_.clear();

        m.queue_len_end.resize(static_cast<size_t>(n_nodes()));
        for (int v = 0; v < n_nodes(); ++v)
            m.queue_len_end[static_cast<size_t>(v)] = node_occupancy(v);

        m.reward_mps = slot_reward(snap, m.reward_inputs, slot_duration_s_, n_stations_);
        total_reward_ += m.reward_mps;
        slot_metrics_ = nullptr;
        snap_ = nullptr;
        table_ = nullptr;
        return m;
    }

    EpisodeMetrics finalize() const {
        EpisodeMetrics e;
        e.total_reward = total_reward_;
        e.created = created_;
        e.delivered = delivered_;
        e.dropped = dropped_sat_;
        e.leftover = live_count();
        e.held_no_route = held_total_;
        e.mean_delay_s = delivered_ > 0 ? sum_delivered_delay_ / static_cast<double>(delivered_) : 0.0;
        e.loss_rate = created_ > 0 ? static_cast<double>(dropped_sat_) / static_cast<double>(created_) : 0.0;
        e.node_energy_j.resize(static_cast<size_t>(n_nodes()));
        for (int v = 0; v < n_nodes(); ++v)
            e.node_energy_j[static_cast<size_t>(v)] = nodes_[static_cast<size_t>(v)].energy_total_j;
        return e;
    }

private:
    struct NodeState {
        std::deque<int64_t> queue;
        bool busy = false;
        int64_t in_service = -1;
        int service_next_hop = -1;
        double energy_total_j = 0;
        int max_occupancy = 0;
    };

    struct Event {
        enum Type { Arrive, NodeFree };
        double time;
        int64_t seq;
        Type type;
        int node;
        int64_t packet;
        bool operator>(const Event& o) const {
            if (time != o.time) return time > o.time;
            return seq > o.seq;
        }
    };

    void push_event(double time, Event::Type type, int node, int64_t packet) {
        events_.push({time, seq_++, type, node, packet});
    }

    void generate_traffic(double slot_start, double slot_end, SlotMetrics& m) {
        if (traffic_.rate_per_station_per_slot <= 0 || n_stations_ < 2) return;
        std::poisson_distribution<int> count_dist(traffic_.rate_per_station_per_slot);
        std::uniform_real_distribution<double> time_dist(slot_start, slot_end);
        std::uniform_int_distribution<int> dst_dist(0, n_stations_ - 2);
        for (int j = 0; j < n_stations_; ++j) {
            const int count = count_dist(rng_);
            for (int c = 0; c < count; ++c) {
                Packet p;
                p.id = static_cast<int64_t>(packets_.size());
                p.src_station = j;
                int d = dst_dist(rng_);
                if (d >= j) ++d;  // uniform over destinations != source
                p.dst_station = d;
                p.created_s = time_dist(rng_);
                p.position_node = j;
                packets_.push_back(p);
                live_.push_back(p.id);
                ++created_;
                ++m.created;
                m.reward_inputs.push_back({d, j, -1, 0});
                reward_index_.push_back(p.id);
                push_event(p.created_s, Event::Arrive, j, p.id);
            }
        }
    }

    bool is_station(int node) const { return node < n_stations_; }

    void handle_arrival(int64_t pid, int node, double t) {
        auto& p = packets_[static_cast<size_t>(pid)];
        p.position_node = node;
        if (is_station(node) && node == p.dst_station) {
            p.delivered_s = t;
            p.hops.push_back({node, t, -1, -1});  // terminal: no service at the sink
            ++delivered_;
            ++slot_metrics_->delivered;
            const double delay = p.total_delay_s();
            sum_delivered_delay_ += delay;
            slot_metrics_->sum_delivered_delay_s += delay;
            return;
        }
        auto& n = nodes_[static_cast<size_t>(node)];
        const int occupancy = static_cast<int>(n.queue.size()) + (n.busy ? 1 : 0);
        const int cap = is_station(node) ? params_.station_buffer_capacity
                                         : params_.sat_buffer_capacity;
        if (cap >= 0 && occupancy >= cap) {
            p.dropped = true;
            ++slot_metrics_->node_drops[static_cast<size_t>(node)];
            if (is_station(node)) {
                ++dropped_station_;
            } else {
                ++dropped_sat_;
                ++slot_metrics_->dropped;
            }
            return;
        }
        p.node_arrival_s = t;
        p.hops.push_back({node, t, -1, -1});
        n.queue.push_back(pid);
        const int occ = static_cast<int>(n.queue.size()) + (n.busy ? 1 : 0);
        if (occ > n.max_occupancy) n.max_occupancy = occ;
        if (!n.busy) try_start(node, t);
    }

    void handle_node_free(int node, double t) {
        auto& n = nodes_[static_cast<size_t>(node)];
        auto& p = packets_[static_cast<size_t>(n.in_service)];
        p.position_node = n.service_next_hop;  // in flight toward the next node
        n.busy = false;
        n.in_service = -1;
        n.service_next_hop = -1;
        if (!n.queue.empty()) try_start(node, t);
    }

    // Begin serving the head-of-line packet at node v, if routable.
    void try_start(int v, double t) {
        auto& n = nodes_[static_cast<size_t>(v)];
        if (n.busy || n.queue.empty()) return;
        const int64_t pid = n.queue.front();
        auto& p = packets_[static_cast<size_t>(pid)];
        const int nh = table_->get(v, p.dst_station);
        if (nh < 0) {  // unroutable this slot: hold in queue, stall the node
            ++held_total_;
            ++slot_metrics_->held_no_route;
            return;
        }

        double dist = -1;
        link::LinkKind kind;
        if (is_station(v)) {
            if (is_station(nh)) throw std::logic_error("routing: station->station link");
            kind = link::LinkKind::uplink;
            dist = snap_->updown_dist_m(v, nh - n_stations_);
        } else if (is_station(nh)) {
            kind = link::LinkKind::downlink;
            dist = snap_->updown_dist_m(nh, v - n_stations_);
        } else {
            kind = link::LinkKind::isl;
            const auto& nbrs = snap_->neighbor_sets[static_cast<size_t>(v - n_stations_)];
            for (int h = 0; h < 4; ++h) {
                if (nbrs[static_cast<size_t>(h)] == nh - n_stations_) {
                    dist = snap_->neighbor_dist_m[static_cast<size_t>(v - n_stations_)]
                                                 [static_cast<size_t>(h)];
                    break;
                }
            }
        }
        if (dist <= 0) throw std::logic_error("routing: table selects an infeasible link");

        const auto b = link::budget(dist, kind, params_.packet_bits, params_.rf, params_.fso,
                                    params_.prop_speed_mps);
        n.queue.pop_front();
        n.busy = true;
        n.in_service = pid;
        n.service_next_hop = nh;

        p.d_queue_s += t - p.node_arrival_s;
        p.d_proc_s += params_.processing_delay_s;
        p.d_tx_s += b.tx_delay_s;
        p.d_prop_s += b.prop_delay_s;
        p.energy_j += b.tx_energy_j;
        n.energy_total_j += b.tx_energy_j;
        slot_metrics_->node_energy_j[static_cast<size_t>(v)] += b.tx_energy_j;

        const double departure = t + params_.processing_delay_s + b.tx_delay_s;
        auto& hop = p.hops.back();
        hop.service_start_s = t;
        hop.departure_s = departure;
        push_event(departure, Event::NodeFree, v, pid);
        push_event(departure + b.prop_delay_s, Event::Arrive, nh, pid);
    }

    int n_stations_, n_sats_;
    SimParams params_;
    double slot_duration_s_;
    TrafficSpec traffic_;

    std::vector<NodeState> nodes_;
    std::vector<Packet> packets_;
    std::vector<int64_t> live_;
    std::vector<int64_t> reward_index_;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    int64_t seq_ = 0;
    int slot_ = 0;
    int64_t created_ = 0, delivered_ = 0, dropped_sat_ = 0, dropped_station_ = 0;
    int64_t held_total_ = 0;
    double sum_delivered_delay_ = 0;
    double total_reward_ = 0;
    std::mt19937_64 rng_;

    const geom::TopologySnapshot* snap_ = nullptr;
    const RoutingTable* table_ = nullptr;
    SlotMetrics* slot_metrics_ = nullptr;
};

// Table source for one episode (baselines implement this; the learned policy
// drives the simulator through the environment instead).
class Router {
public:
    virtual ~Router() = default;
    virtual RoutingTable tables(int slot) = 0;
};

inline EpisodeMetrics run_episode(
    const std::vector<geom::TopologySnapshot>& snapshots, Router& router, Network& net,
    uint64_t traffic_seed,
    const std::function<void(const SlotMetrics&)>& slot_sink = nullptr) {
    net.reset(traffic_seed);
    for (const auto& snap : snapshots) {
        RoutingTable table = router.tables(snap.slot_index);
        SlotMetrics m = net.step_slot(snap, table);
        if (slot_sink) slot_sink(m);
    }
    return net.finalize();
}

}  // namespace istn::sim
