#pragma once

// Classical routing baselines: per-slot shortest-path tables (Dijkstra) over
// the frozen topology, and station attachment policies (LRST / NSD / CSGI)
// that pin each station's uplink while satellites forward along shortest
// paths. Paths never transit through a ground station: stations only source
// packets and the destination station only sinks them.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "istn/geometry.hpp"
#include "istn/link.hpp"
#include "istn/sim.hpp"

namespace istn::route {

enum class EdgeWeighting { delay, hops, distance };

inline double edge_weight(double dist_m, link::LinkKind kind, EdgeWeighting w,
                          const sim::SimParams& p) {
    switch (w) {
        case EdgeWeighting::hops:
            return 1.0;
        case EdgeWeighting::distance:
            return dist_m;
        case EdgeWeighting::delay:
        default: {
            const double rate = kind == link::LinkKind::isl
                                    ? link::fso_rate(dist_m, p.fso)
                                    : link::rf_rate(dist_m, p.rf, p.prop_speed_mps);
            return dist_m / p.prop_speed_mps + p.packet_bits / rate;
        }
    }
}

// Shortest-path next-hop tables for every (node, destination station) pair.
// `attachment` (optional, per station) restricts a station's uplink to one
// satellite id; -1 entries mean the station currently has no uplink.
inline sim::RoutingTable dijkstra_tables(const geom::TopologySnapshot& snap,
                                         const sim::SimParams& params, EdgeWeighting weighting,
                                         const std::vector<int>* attachment = nullptr) {
    const int n_st = snap.num_stations;
    const int n_sat = snap.num_sats();
    const int n_nodes = n_st + n_sat;
    const double inf = std::numeric_limits<double>::infinity();
    sim::RoutingTable table(n_st, n_sat);

    // Precompute edge weights once per snapshot.
    std::vector<std::array<double, 4>> isl_w(static_cast<size_t>(n_sat),
                                             {inf, inf, inf, inf});
    for (int s = 0; s < n_sat; ++s)
        for (int h = 0; h < 4; ++h) {
            const int t = snap.neighbor_sets[static_cast<size_t>(s)][static_cast<size_t>(h)];
            if (t < 0 || t == s) continue;
            isl_w[static_cast<size_t>(s)][static_cast<size_t>(h)] =
                edge_weight(snap.neighbor_dist_m[static_cast<size_t>(s)][static_cast<size_t>(h)],
                            link::LinkKind::isl, weighting, params);
        }
    std::vector<std::vector<double>> up_w(static_cast<size_t>(n_st));
    std::vector<std::vector<double>> down_w(static_cast<size_t>(n_st));
    for (int j = 0; j < n_st; ++j) {
        const auto& set = snap.uplink_sets[static_cast<size_t>(j)];
        up_w[static_cast<size_t>(j)].resize(set.size());
        down_w[static_cast<size_t>(j)].resize(set.size());
        for (size_t k = 0; k < set.size(); ++k) {
            const double d = snap.uplink_dist_m[static_cast<size_t>(j)][k];
            up_w[static_cast<size_t>(j)][k] =
                edge_weight(d, link::LinkKind::uplink, weighting, params);
            down_w[static_cast<size_t>(j)][k] =
                edge_weight(d, link::LinkKind::downlink, weighting, params);
        }
    }

    std::vector<double> dist(static_cast<size_t>(n_nodes));
    using QE = std::pair<double, int>;  // (distance to destination, node)
    for (int d = 0; d < n_st; ++d) {
        std::fill(dist.begin(), dist.end(), inf);
        std::priority_queue<QE, std::vector<QE>, std::greater<>> q;
        dist[static_cast<size_t>(d)] = 0.0;
        q.push({0.0, d});
        while (!q.empty()) {
            auto [du, u] = q.top();
            q.pop();
            if (du > dist[static_cast<size_t>(u)]) continue;
            if (u == d) {
                // reverse edges into the destination: downlinks from visible sats
                const auto& set = snap.uplink_sets[static_cast<size_t>(d)];
                for (size_t k = 0; k < set.size(); ++k) {
                    const int s_node = n_st + set[k];
                    const double nd = du + down_w[static_cast<size_t>(d)][k];
                    if (nd < dist[static_cast<size_t>(s_node)]) {
                        dist[static_cast<size_t>(s_node)] = nd;
                        q.push({nd, s_node});
                    }
                }
            } else if (u >= n_st) {
                const int s = u - n_st;
                // reverse ISL edges
                const auto& nbrs = snap.neighbor_sets[static_cast<size_t>(s)];
                for (int h = 0; h < 4; ++h) {
                    const int t = nbrs[static_cast<size_t>(h)];
                    if (t < 0 || t == s) continue;
                    const double nd = du + isl_w[static_cast<size_t>(s)][static_cast<size_t>(h)];
                    const int t_node = n_st + t;
                    if (nd < dist[static_cast<size_t>(t_node)]) {
                        dist[static_cast<size_t>(t_node)] = nd;
                        q.push({nd, t_node});
                    }
                }
                // reverse uplink edges (station -> this sat); stations are sinks here
                // and need no heap entries, their distance is finalized below.
            }
        }

        // next hops: stations pick an uplink satellite, satellites pick a
        // neighbor or the destination downlink; ties break on lowest node id.
        for (int j = 0; j < n_st; ++j) {
            if (j == d) continue;
            const auto& set = snap.uplink_sets[static_cast<size_t>(j)];
            double best = inf;
            int best_node = -1;
            for (size_t k = 0; k < set.size(); ++k) {
                if (attachment && (*attachment)[static_cast<size_t>(j)] != set[k]) continue;
                const int v = n_st + set[k];
                const double c = up_w[static_cast<size_t>(j)][k] + dist[static_cast<size_t>(v)];
                if (c < best - 1e-15 || (std::abs(c - best) <= 1e-15 && v < best_node)) {
                    best = c;
                    best_node = v;
                }
            }
            if (best_node >= 0 && best < inf) table.set(j, d, best_node);
        }
        for (int s = 0; s < n_sat; ++s) {
            if (!snap.sat_alive(s)) continue;
            double best = inf;
            int best_node = -1;
            const auto& nbrs = snap.neighbor_sets[static_cast<size_t>(s)];
            for (int h = 0; h < 4; ++h) {
                const int t = nbrs[static_cast<size_t>(h)];
                if (t < 0 || t == s) continue;
                const int v = n_st + t;
                const double c =
                    isl_w[static_cast<size_t>(s)][static_cast<size_t>(h)] + dist[static_cast<size_t>(v)];
                if (c < best - 1e-15 || (std::abs(c - best) <= 1e-15 && v < best_node)) {
                    best = c;
                    best_node = v;
                }
            }
            if (snap.station_visible_from(s, d)) {
                const auto& set = snap.uplink_sets[static_cast<size_t>(d)];
                const auto it = std::lower_bound(set.begin(), set.end(), s);
                const double c = down_w[static_cast<size_t>(d)][static_cast<size_t>(it - set.begin())];
                if (c < best - 1e-15 || (std::abs(c - best) <= 1e-15 && d < best_node)) {
                    best = c;
                    best_node = d;
                }
            }
            if (best_node >= 0 && best < inf) table.set(n_st + s, d, best_node);
        }
    }
    return table;
}

enum class BaselineKind { dijkstra, lrst, nsd, csgi };

// Consecutive slots (starting at `slot`) during which satellite s stays
// visible from station j.
inline int remaining_visible_slots(const std::vector<geom::TopologySnapshot>& snaps,
                                   int slot, int j, int s) {
    int count = 0;
    for (size_t t = static_cast<size_t>(slot - 1); t < snaps.size(); ++t) {
        const auto& set = snaps[t].uplink_sets[static_cast<size_t>(j)];
        if (!std::binary_search(set.begin(), set.end(), s)) break;
        ++count;
    }
    return count;
}

// Station attachment + shortest-path forwarding. LRST keeps the current
// satellite while visible and reattaches to the one with the longest
// remaining service time; NSD reattaches to the nearest; CSGI tracks the
// satellite whose ground track is closest every slot.
class BaselineRouter : public sim::Router {
public:
    BaselineRouter(BaselineKind kind, const std::vector<geom::TopologySnapshot>& snaps,
                   sim::SimParams params, EdgeWeighting weighting = EdgeWeighting::delay)
        : kind_(kind), snaps_(snaps), params_(std::move(params)), weighting_(weighting) {
        if (snaps_.empty()) throw std::invalid_argument("BaselineRouter: no snapshots");
        attachment_.assign(snaps_[0].uplink_sets.size(), -1);
    }

    sim::RoutingTable tables(int slot) override {
        const auto& snap = snaps_.at(static_cast<size_t>(slot - 1));
        if (kind_ == BaselineKind::dijkstra)
            return dijkstra_tables(snap, params_, weighting_);
        update_attachment(snap, slot);
        return dijkstra_tables(snap, params_, weighting_, &attachment_);
    }

    const std::vector<int>& attachment() const { return attachment_; }

private:
    void update_attachment(const geom::TopologySnapshot& snap, int slot) {
        const int n_st = snap.num_stations;
        for (int j = 0; j < n_st; ++j) {
            const auto& set = snap.uplink_sets[static_cast<size_t>(j)];
            int cur = attachment_[static_cast<size_t>(j)];
            const bool still_visible =
                cur >= 0 && std::binary_search(set.begin(), set.end(), cur);
            if (kind_ != BaselineKind::csgi && still_visible) continue;
            attachment_[static_cast<size_t>(j)] = choose(snap, slot, j, set);
        }
    }

    int choose(const geom::TopologySnapshot& snap, int slot, int j,
               const std::vector<int>& set) const {
        if (set.empty()) return -1;
        int best = -1;
        double best_score = 0;
        for (size_t k = 0; k < set.size(); ++k) {
            double score = 0;
            switch (kind_) {
                case BaselineKind::lrst:
                    // maximize remaining visible slots
                    score = -static_cast<double>(
                        remaining_visible_slots(snaps_, slot, j, set[k]));
                    break;
                case BaselineKind::nsd:
                    score = snap.uplink_dist_m[static_cast<size_t>(j)][k];
                    break;
                case BaselineKind::csgi:
                    score = geom::great_circle_m(
                        snap.sat_positions[static_cast<size_t>(set[k])],
                        snap.station_positions[static_cast<size_t>(j)], snap.earth_radius_m);
                    break;
                case BaselineKind::dijkstra:
                    break;
            }
            if (best < 0 || score < best_score - 1e-12) {
                best = set[k];
                best_score = score;
            }
        }
        return best;
    }

    BaselineKind kind_;
    const std::vector<geom::TopologySnapshot>& snaps_;
    sim::SimParams params_;
    EdgeWeighting weighting_;
    std::vector<int> attachment_;
};

}  // namespace istn::route
