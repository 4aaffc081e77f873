#pragma once

// Link budgets. Station<->satellite hops are RF (Shannon rate from a dB-domain
// budget); inter-satellite hops are free-space optical with an
// exponential-attenuation SNR model. Rates in bit/s, delays in seconds,
// energies in joules.

#include <cmath>
#include <stdexcept>

namespace istn::link {

inline constexpr double kDefaultPropSpeed = 3e8;  // m/s

inline double watts_to_dbm(double w) {
    if (w <= 0) throw std::invalid_argument("watts_to_dbm: power must be > 0");
    return 10.0 * std::log10(w * 1e3);
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

struct RfParams {
    double bandwidth_hz = 5e8;        // B_R
    double tx_power_w = 5.0;          // P_R
    double carrier_hz = 28e9;         // f_c
    double tx_gain_dbi = 45.0;        // G_T
    double rx_gain_dbi = 30.0;        // G_R
    double noise_density_dbm_hz = -174.0;  // N_0
};

struct FsoParams {
    double bandwidth_hz = 5e8;        // B_O
    double tx_power_w = 5.0;          // P_O
    double amplitude_snr = 1e9;       // gamma: reference amplitude SNR
    double pulse_alpha = 0.1;         // Gaussian pulse width parameter
    double wavelength_nm = 1550.0;
    double visibility_km = 15.0;      // L: optical visibility range
    double size_exponent = 1.3;       // p: particle-size distribution exponent
};

enum class LinkKind { uplink, isl, downlink };

// Free-space path loss in dB: 20*log10(4*pi*f*d / H).
inline double fspl_db(double distance_m, double carrier_hz,
                      double prop_speed_mps = kDefaultPropSpeed) {
    if (distance_m <= 0) throw std::invalid_argument("fspl_db: distance must be > 0");
    if (carrier_hz <= 0) throw std::invalid_argument("fspl_db: carrier must be > 0");
    return 20.0 * std::log10(4.0 * M_PI * carrier_hz * distance_m / prop_speed_mps);
}

// Shannon rate of the RF hop. The budget is assembled in the dB domain:
// SNR_dB = P_dBm + G_T + G_R - FSPL_dB - (N_0 + 10*log10(B_R)).
inline double rf_rate(double distance_m, const RfParams& rf,
                      double prop_speed_mps = kDefaultPropSpeed) {
    const double p_dbm = watts_to_dbm(rf.tx_power_w);
    const double noise_dbm = rf.noise_density_dbm_hz + 10.0 * std::log10(rf.bandwidth_hz);
    const double snr_db = p_dbm + rf.tx_gain_dbi + rf.rx_gain_dbi -
                          fspl_db(distance_m, rf.carrier_hz, prop_speed_mps) - noise_dbm;
    return rf.bandwidth_hz * std::log2(1.0 + db_to_linear(snr_db));
}

// Attenuation coefficient beta (1/m) from optical visibility. beta_dB is the
// usual visibility formula in dB/km; the 1e4*log10(e) factor converts dB/km
// to nepers per meter.
inline double fso_beta_per_m(const FsoParams& fso) {
    if (fso.visibility_km <= 0) throw std::invalid_argument("fso: visibility must be > 0");
    const double beta_db_per_km =
        (3.91 / fso.visibility_km) * std::pow(fso.wavelength_nm / 550.0, -fso.size_exponent);
    return beta_db_per_km / (1e4 * std::log10(std::exp(1.0)));
}

inline double fso_k1(const FsoParams& fso) {
    return fso.amplitude_snr * fso.amplitude_snr /
           (2.0 * M_PI * std::exp(1.0) * fso.pulse_alpha * fso.pulse_alpha);
}

inline double fso_k2(const FsoParams& fso) { return 2.0 * fso_beta_per_m(fso); }

// Rate of the optical inter-satellite hop: (B_O/2) * log2(1 + k1*exp(-k2*d)).
inline double fso_rate(double distance_m, const FsoParams& fso) {
    if (distance_m <= 0) throw std::invalid_argument("fso_rate: distance must be > 0");
    return 0.5 * fso.bandwidth_hz *
           std::log2(1.0 + fso_k1(fso) * std::exp(-fso_k2(fso) * distance_m));
}

struct LinkBudget {
    LinkKind kind = LinkKind::isl;
    double rate_bps = 0;
    double tx_delay_s = 0;    // L_P / rate
    double prop_delay_s = 0;  // d / H
    double tx_energy_j = 0;   // tx_delay * tx power
};

inline LinkBudget budget(double distance_m, LinkKind kind, double packet_bits,
                         const RfParams& rf, const FsoParams& fso,
                         double prop_speed_mps = kDefaultPropSpeed) {
    if (packet_bits <= 0) throw std::invalid_argument("budget: packet_bits must be > 0");
    LinkBudget b;
    b.kind = kind;
    if (kind == LinkKind::isl) {
        b.rate_bps = fso_rate(distance_m, fso);
        b.tx_delay_s = packet_bits / b.rate_bps;
        b.tx_energy_j = b.tx_delay_s * fso.tx_power_w;
    } else {
        b.rate_bps = rf_rate(distance_m, rf, prop_speed_mps);
        b.tx_delay_s = packet_bits / b.rate_bps;
        b.tx_energy_j = b.tx_delay_s * rf.tx_power_w;
    }
    b.prop_delay_s = distance_m / prop_speed_mps;
    return b;
}

}  // namespace istn::link
