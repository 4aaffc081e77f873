#pragma once

// Constellation geometry: circular Walker-style orbits, +Grid inter-satellite
// neighbor structure, station visibility, and per-slot topology snapshots.
// Satellites and ground stations live in one common frame (non-rotating
// spherical Earth), so satellite positions are exactly periodic in the
// orbital period.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace istn::geom {

inline constexpr double kMu = 3.986004418e14;  // gravitational parameter, m^3/s^2
inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 unit() const {
        double n = norm();
        return {x / n, y / n, z / n};
    }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

struct ConstellationConfig {
    int num_planes = 0;
    int sats_per_plane = 0;
    double altitude_m = 0;
    double inclination_deg = 0;
    double phasing_deg = 0;           // in-plane anomaly offset between adjacent planes
    double earth_radius_m = 6371e3;
    double min_elevation_deg = 10.0;

    int num_sats() const { return num_planes * sats_per_plane; }
    double orbit_radius_m() const { return earth_radius_m + altitude_m; }
    double orbital_period_s() const {
        double a = orbit_radius_m();
        return 2.0 * kPi * std::sqrt(a * a * a / kMu);
    }

    void validate() const {
        if (num_planes < 1) throw std::invalid_argument("constellation.num_planes must be >= 1");
        if (sats_per_plane < 1) throw std::invalid_argument("constellation.sats_per_plane must be >= 1");
        if (altitude_m <= 0) throw std::invalid_argument("constellation.altitude_m must be > 0");
        if (earth_radius_m <= 0) throw std::invalid_argument("constellation.earth_radius_m must be > 0");
        if (min_elevation_deg < 0 || min_elevation_deg >= 90)
            throw std::invalid_argument("constellation.min_elevation_deg must be in [0, 90)");
    }
};

struct GroundStation {
    int id = 0;
    double lat_deg = 0;
    double lon_deg = 0;

    Vec3 ecef(double earth_radius_m) const {
        double lat = deg2rad(lat_deg), lon = deg2rad(lon_deg);
        return {earth_radius_m * std::cos(lat) * std::cos(lon),
                earth_radius_m * std::cos(lat) * std::sin(lon),
                earth_radius_m * std::sin(lat)};
    }
};

// Satellite index convention: sat = plane * sats_per_plane + slot_in_plane.
inline int sat_index(const ConstellationConfig& c, int plane, int k) {
    return plane * c.sats_per_plane + k;
}

// Positions of every satellite at time t (seconds). Circular orbits; plane p
// has RAAN p * 360/P and in-plane satellites evenly phased, with an optional
// inter-plane phasing offset.
inline std::vector<Vec3> propagate(const ConstellationConfig& c, double t_s) {
    c.validate();
    const double r = c.orbit_radius_m();
    const double inc = deg2rad(c.inclination_deg);
    const double n = 2.0 * kPi / c.orbital_period_s();  // mean motion, rad/s
    const double cos_i = std::cos(inc), sin_i = std::sin(inc);

    std::vector<Vec3> out(static_cast<size_t>(c.num_sats()));
    for (int p = 0; p < c.num_planes; ++p) {
        const double raan = 2.0 * kPi * p / c.num_planes;
        const double cos_O = std::cos(raan), sin_O = std::sin(raan);
        for (int k = 0; k < c.sats_per_plane; ++k) {
            const double u = 2.0 * kPi * k / c.sats_per_plane +
                             deg2rad(c.phasing_deg) * p + n * t_s;
            const double cu = std::cos(u), su = std::sin(u);
            out[static_cast<size_t>(sat_index(c, p, k))] = {
                r * (cu * cos_O - su * cos_i * sin_O),
                r * (cu * sin_O + su * cos_i * cos_O),
                r * su * sin_i};
        }
    }
    return out;
}

// +Grid neighbors of every satellite, in fixed head order:
// [in-plane previous, in-plane next, previous plane same slot, next plane same slot].
// Time-invariant. Degenerate constellations (fewer than 3 planes or 3 slots
// per plane) can repeat entries; graph construction dedupes.
inline std::vector<std::array<int, 4>> grid_neighbors(const ConstellationConfig& c) {
    c.validate();
    std::vector<std::array<int, 4>> out(static_cast<size_t>(c.num_sats()));
    const int P = c.num_planes, S = c.sats_per_plane;
    for (int p = 0; p < P; ++p) {
        for (int k = 0; k < S; ++k) {
            out[static_cast<size_t>(sat_index(c, p, k))] = {
                sat_index(c, p, (k - 1 + S) % S),
                sat_index(c, p, (k + 1) % S),
                sat_index(c, (p - 1 + P) % P, k),
                sat_index(c, (p + 1) % P, k)};
        }
    }
    return out;
}

// Elevation of a satellite above a station's local horizon, degrees.
inline double elevation_deg(const Vec3& sat_pos, const Vec3& station_ecef) {
    const Vec3 d = sat_pos - station_ecef;
    const double dn = d.norm();
    if (dn == 0) throw std::invalid_argument("elevation_deg: coincident points");
    const double sin_el = d.dot(station_ecef.unit()) / dn;
    return rad2deg(std::asin(std::clamp(sin_el, -1.0, 1.0)));
}

inline bool visible(const Vec3& sat_pos, const Vec3& station_ecef, double min_elevation_deg) {
    return elevation_deg(sat_pos, station_ecef) >= min_elevation_deg;
}

// Great-circle distance between the ground projections of two points, meters.
inline double great_circle_m(const Vec3& a, const Vec3& b, double earth_radius_m) {
    const Vec3 ua = a.unit(), ub = b.unit();
    return earth_radius_m * std::atan2(ua.cross(ub).norm(), ua.dot(ub));
}

// Distance from a satellite's sub-satellite point to a ground station along
// the surface, meters.
inline double ground_track_distance(const Vec3& sat_pos, const GroundStation& gs,
                                    double earth_radius_m) {
    return great_circle_m(sat_pos, gs.ecef(earth_radius_m), earth_radius_m);
}

// Frozen picture of the network during one time slot (1-based slot_index).
// Distances are computed once per admissible pair and shared by both
// directions, so they are symmetric by construction.
struct TopologySnapshot {
    int slot_index = 0;
    double time_s = 0;
    int num_stations = 0;
    double earth_radius_m = 6371e3;

    std::vector<Vec3> sat_positions;
    std::vector<Vec3> station_positions;
    std::vector<std::array<int, 4>> neighbor_sets;        // -1 where a neighbor is removed
    std::vector<std::array<double, 4>> neighbor_dist_m;   // aligned with neighbor_sets
    std::vector<std::vector<int>> uplink_sets;            // per station, sat ids sorted asc
    std::vector<std::vector<double>> uplink_dist_m;       // aligned with uplink_sets
    std::vector<std::vector<int>> downlink_sets;          // per sat, station ids sorted asc
    std::vector<uint8_t> sat_removed;                     // perturbation mask

    int num_sats() const { return static_cast<int>(sat_positions.size()); }

    bool sat_alive(int s) const {
        return sat_removed.empty() || !sat_removed[static_cast<size_t>(s)];
    }

    // Distance station j <-> satellite s, or -1 when not visible.
    double updown_dist_m(int j, int s) const {
        const auto& set = uplink_sets[static_cast<size_t>(j)];
        auto it = std::lower_bound(set.begin(), set.end(), s);
        if (it == set.end() || *it != s) return -1.0;
        return uplink_dist_m[static_cast<size_t>(j)][static_cast<size_t>(it - set.begin())];
    }

    bool station_visible_from(int sat, int station) const {
        const auto& d = downlink_sets[static_cast<size_t>(sat)];
        return std::binary_search(d.begin(), d.end(), station);
    }
};

// Build the frozen topology for a slot. Slot s covers
// [(s-1)*slot_duration, s*slot_duration); geometry is sampled at the slot
// start. `removed_sats` marks satellites excluded by a perturbation.
inline TopologySnapshot snapshot(const ConstellationConfig& c,
                                 const std::vector<GroundStation>& stations,
                                 int slot_index, double slot_duration_s,
                                 const std::vector<uint8_t>& removed_sats = {}) {
    if (slot_index < 1) throw std::invalid_argument("snapshot: slot_index is 1-based");
    if (slot_duration_s <= 0) throw std::invalid_argument("snapshot: slot_duration_s must be > 0");
    if (!removed_sats.empty() && removed_sats.size() != static_cast<size_t>(c.num_sats()))
        throw std::invalid_argument("snapshot: removed_sats size mismatch");

    TopologySnapshot snap;
    snap.slot_index = slot_index;
    snap.time_s = (slot_index - 1) * slot_duration_s;
    snap.num_stations = static_cast<int>(stations.size());
    snap.earth_radius_m = c.earth_radius_m;
    snap.sat_positions = propagate(c, snap.time_s);
    snap.sat_removed = removed_sats;

    snap.station_positions.reserve(stations.size());
    for (const auto& gs : stations) snap.station_positions.push_back(gs.ecef(c.earth_radius_m));

    const int ns = c.num_sats();
    auto alive = [&](int s) {
        return removed_sats.empty() || !removed_sats[static_cast<size_t>(s)];
    };

    snap.neighbor_sets = grid_neighbors(c);
    snap.neighbor_dist_m.assign(static_cast<size_t>(ns), {-1.0, -1.0, -1.0, -1.0});
    for (int s = 0; s < ns; ++s) {
        auto& nbrs = snap.neighbor_sets[static_cast<size_t>(s)];
        for (int h = 0; h < 4; ++h) {
            if (!alive(s) || !alive(nbrs[static_cast<size_t>(h)])) {
                nbrs[static_cast<size_t>(h)] = -1;
                continue;
            }
            snap.neighbor_dist_m[static_cast<size_t>(s)][static_cast<size_t>(h)] =
                distance(snap.sat_positions[static_cast<size_t>(s)],
                         snap.sat_positions[static_cast<size_t>(nbrs[static_cast<size_t>(h)])]);
        }
    }

    snap.uplink_sets.assign(stations.size(), {});
    snap.uplink_dist_m.assign(stations.size(), {});
    snap.downlink_sets.assign(static_cast<size_t>(ns), {});
    for (size_t j = 0; j < stations.size(); ++j) {
        for (int s = 0; s < ns; ++s) {
            if (!alive(s)) continue;
            const Vec3& sp = snap.sat_positions[static_cast<size_t>(s)];
            if (visible(sp, snap.station_positions[j], c.min_elevation_deg)) {
                snap.uplink_sets[j].push_back(s);
                snap.uplink_dist_m[j].push_back(distance(sp, snap.station_positions[j]));
                snap.downlink_sets[static_cast<size_t>(s)].push_back(static_cast<int>(j));
            }
        }
    }
    return snap;
}

}  // namespace istn::geom
