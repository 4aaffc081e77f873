#pragma once

// Minimal dense neural network kit: MLPs with tanh hidden layers and a linear
// output, reverse-mode gradients computed by hand, bias-corrected Adam, and a
// masked categorical distribution for action heads. All float64. Checkpoints
// are a versioned JSON manifest plus a flat little-endian float64 blob and
// round-trip bit-exactly.

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace istn::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

struct Mlp {
    std::vector<int> sizes;               // {in, hidden..., out}
    std::vector<std::vector<double>> w;   // per layer, row-major (rows = out)
    std::vector<std::vector<double>> b;

    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }
    int layers() const { return static_cast<int>(sizes.size()) - 1; }

    size_t param_count() const {
        size_t n = 0;
        for (int l = 0; l < layers(); ++l)
            n += w[static_cast<size_t>(l)].size() + b[static_cast<size_t>(l)].size();
        return n;
    }
};

namespace detail {

// Orthogonal-style init: Gram-Schmidt the rows (or columns when taller than
// wide) of a Gaussian matrix, then scale by gain.
inline void orthogonal_fill(std::vector<double>& m, int rows, int cols, double gain,
                            std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    const bool by_rows = rows <= cols;
    const int nvec = by_rows ? rows : cols;
    const int dim = by_rows ? cols : rows;
    std::vector<std::vector<double>> v(static_cast<size_t>(nvec),
                                       std::vector<double>(static_cast<size_t>(dim)));
    for (auto& row : v)
        for (auto& x : row) x = g(rng);
    for (int i = 0; i < nvec; ++i) {
        for (int j = 0; j < i; ++j) {
            double dot = 0;
            for (int k = 0; k < dim; ++k)
                dot += v[static_cast<size_t>(i)][static_cast<size_t>(k)] *
                       v[static_cast<size_t>(j)][static_cast<size_t>(k)];
            for (int k = 0; k < dim; ++k)
                v[static_cast<size_t>(i)][static_cast<size_t>(k)] -=
                    dot * v[static_cast<size_t>(j)][static_cast<size_t>(k)];
        }
        double norm = 0;
        for (int k = 0; k < dim; ++k)
            norm += v[static_cast<size_t>(i)][static_cast<size_t>(k)] *
                    v[static_cast<size_t>(i)][static_cast<size_t>(k)];
        norm = std::sqrt(norm);
        if (norm < 1e-12) {  // freak degeneracy: fall back to a unit basis vector
            for (int k = 0; k < dim; ++k) v[static_cast<size_t>(i)][static_cast<size_t>(k)] = 0;
            v[static_cast<size_t>(i)][static_cast<size_t>(i % dim)] = 1.0;
            norm = 1.0;
        }
        for (int k = 0; k < dim; ++k) v[static_cast<size_t>(i)][static_cast<size_t>(k)] /= norm;
    }
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            m[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)] =
                gain * (by_rows ? v[static_cast<size_t>(r)][static_cast<size_t>(c)]
                                : v[static_cast<size_t>(c)][static_cast<size_t>(r)]);
}

}  // namespace detail

// Fresh network; hidden layers get unit-gain orthogonal rows, the output
// layer a caller-chosen gain (small for policy heads).
inline Mlp make_mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_gain = 1.0) {
    if (sizes.size() < 2) throw std::invalid_argument("make_mlp: need at least in/out sizes");
    for (int s : sizes)
        if (s < 1) throw std::invalid_argument("make_mlp: layer sizes must be positive");
    Mlp net;
    net.sizes = std::move(sizes);
    const int L = net.layers();
    net.w.resize(static_cast<size_t>(L));
    net.b.resize(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        const int rows = net.sizes[static_cast<size_t>(l) + 1];
        const int cols = net.sizes[static_cast<size_t>(l)];
        net.w[static_cast<size_t>(l)].assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0);
        net.b[static_cast<size_t>(l)].assign(static_cast<size_t>(rows), 0.0);
        detail::orthogonal_fill(net.w[static_cast<size_t>(l)], rows, cols,
                                l == L - 1 ? output_gain : 1.0, rng);
    }
    return net;
}

// Activations kept for the backward pass; act[0] is the input, act[L] the output.
struct MlpWorkspace {
    std::vector<std::vector<double>> act;
};

inline const std::vector<double>& forward(const Mlp& net, const std::vector<double>& input,
                                          MlpWorkspace& ws) {
    if (static_cast<int>(input.size()) != net.input_dim())
        throw std::invalid_argument("forward: input dimension mismatch");
    const int L = net.layers();
    ws.act.resize(static_cast<size_t>(L) + 1);
    ws.act[0] = input;
    for (int l = 0; l < L; ++l) {
        const int rows = net.sizes[static_cast<size_t>(l) + 1];
        const int cols = net.sizes[static_cast<size_t>(l)];
        const auto& in = ws.act[static_cast<size_t>(l)];
        auto& out = ws.act[static_cast<size_t>(l) + 1];
        out.assign(static_cast<size_t>(rows), 0.0);
        const double* W = net.w[static_cast<size_t>(l)].data();
        for (int r = 0; r < rows; ++r) {
            double z = net.b[static_cast<size_t>(l)][static_cast<size_t>(r)];
            const double* wr = W + static_cast<size_t>(r) * static_cast<size_t>(cols);
            for (int c = 0; c < cols; ++c) z += wr[c] * in[static_cast<size_t>(c)];
            out[static_cast<size_t>(r)] = l == L - 1 ? z : std::tanh(z);
        }
    }
    return ws.act[static_cast<size_t>(L)];
}

struct MlpGrad {
    std::vector<std::vector<double>> w, b;

    void match(const Mlp& net) {
        w.resize(net.w.size());
        b.resize(net.b.size());
        for (size_t l = 0; l < net.w.size(); ++l) {
            w[l].assign(net.w[l].size(), 0.0);
            b[l].assign(net.b[l].size(), 0.0);
        }
    }
    void zero() {
        for (auto& m : w) std::fill(m.begin(), m.end(), 0.0);
        for (auto& m : b) std::fill(m.begin(), m.end(), 0.0);
    }
    void scale(double s) {
        for (auto& m : w)
            for (auto& x : m) x *= s;
        for (auto& m : b)
            for (auto& x : m) x *= s;
    }
};

// Accumulate dLoss/dParams into `grad` given dLoss/dOutput; optionally
// returns dLoss/dInput. The workspace must come from forward() on `net`.
inline void backward(const Mlp& net, const MlpWorkspace& ws, const std::vector<double>& d_out,
                     MlpGrad& grad, std::vector<double>* d_input = nullptr) {
    const int L = net.layers();
    if (static_cast<int>(d_out.size()) != net.output_dim())
        throw std::invalid_argument("backward: upstream dimension mismatch");
    std::vector<double> delta = d_out;  // dL/dz at the current layer (output is linear)
    for (int l = L - 1; l >= 0; --l) {
        const int rows = net.sizes[static_cast<size_t>(l) + 1];
        const int cols = net.sizes[static_cast<size_t>(l)];
        const auto& in = ws.act[static_cast<size_t>(l)];
        auto& gw = grad.w[static_cast<size_t>(l)];
        auto& gb = grad.b[static_cast<size_t>(l)];
        for (int r = 0; r < rows; ++r) {
            const double dr = delta[static_cast<size_t>(r)];
            gb[static_cast<size_t>(r)] += dr;
            double* gwr = gw.data() + static_cast<size_t>(r) * static_cast<size_t>(cols);
            for (int c = 0; c < cols; ++c) gwr[c] += dr * in[static_cast<size_t>(c)];
        }
        if (l == 0 && !d_input) break;
        std::vector<double> prev(static_cast<size_t>(cols), 0.0);
        const double* W = net.w[static_cast<size_t>(l)].data();
        for (int r = 0; r < rows; ++r) {
            const double dr = delta[static_cast<size_t>(r)];
            const double* wr = W + static_cast<size_t>(r) * static_cast<size_t>(cols);
            for (int c = 0; c < cols; ++c) prev[static_cast<size_t>(c)] += dr * wr[c];
        }
        if (l > 0) {
            // through the tanh of the previous layer's output
            const auto& a = ws.act[static_cast<size_t>(l)];
            for (int c = 0; c < cols; ++c)
                prev[static_cast<size_t>(c)] *= 1.0 - a[static_cast<size_t>(c)] * a[static_cast<size_t>(c)];
        }
        delta = std::move(prev);
    }
    if (d_input) *d_input = std::move(delta);
}

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<double>> mw, vw, mb, vb;

    void match(const Mlp& net) {
        mw.resize(net.w.size());
        vw.resize(net.w.size());
        mb.resize(net.b.size());
        vb.resize(net.b.size());
        for (size_t l = 0; l < net.w.size(); ++l) {
            mw[l].assign(net.w[l].size(), 0.0);
            vw[l].assign(net.w[l].size(), 0.0);
            mb[l].assign(net.b[l].size(), 0.0);
            vb[l].assign(net.b[l].size(), 0.0);
        }
    }
};

// One bias-corrected Adam step. direction = +1 ascends the objective the
// gradient came from, -1 descends. Zero gradients leave parameters unchanged.
inline void adam_step(Mlp& net, const MlpGrad& grad, AdamState& st, double lr,
                      double direction) {
    if (st.mw.empty()) st.match(net);
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    auto apply = [&](std::vector<double>& p, const std::vector<double>& g,
                     std::vector<double>& m, std::vector<double>& v) {
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] += direction * lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    };
    for (size_t l = 0; l < net.w.size(); ++l) {
        apply(net.w[l], grad.w[l], st.mw[l], st.vw[l]);
        apply(net.b[l], grad.b[l], st.mb[l], st.vb[l]);
    }
}

// Categorical distribution over logits with a validity mask. Masked entries
// carry exactly zero probability; log-probabilities use a max-shifted
// log-sum-exp, so a single valid action has log-prob exactly 0.
struct MaskedCategorical {
    std::vector<double> logp;   // -inf on masked entries
    std::vector<uint8_t> mask;

    static MaskedCategorical from(const std::vector<double>& logits,
                                  const std::vector<uint8_t>& valid) {
        if (logits.size() != valid.size())
            throw std::invalid_argument("MaskedCategorical: size mismatch");
        MaskedCategorical d;
        d.mask = valid;
        d.logp.assign(logits.size(), -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < logits.size(); ++i)
            if (valid[i] && logits[i] > mx) mx = logits[i];
        if (!std::isfinite(mx))
            throw std::invalid_argument("MaskedCategorical: no valid action");
        double z = 0;
        for (size_t i = 0; i < logits.size(); ++i)
            if (valid[i]) z += std::exp(logits[i] - mx);
        const double logz = mx + std::log(z);
        for (size_t i = 0; i < logits.size(); ++i)
            if (valid[i]) d.logp[i] = logits[i] - logz;
        return d;
    }

    double prob(size_t i) const { return mask[i] ? std::exp(logp[i]) : 0.0; }

    double log_prob(int a) const {
        if (a < 0 || static_cast<size_t>(a) >= logp.size() || !mask[static_cast<size_t>(a)])
            throw std::invalid_argument("MaskedCategorical: log_prob of invalid action");
        return logp[static_cast<size_t>(a)];
    }

    int sample(std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const double u = u01(rng);
        double cum = 0;
        int last_valid = -1;
        for (size_t i = 0; i < logp.size(); ++i) {
            if (!mask[i]) continue;
            last_valid = static_cast<int>(i);
            cum += std::exp(logp[i]);
            if (u < cum) return static_cast<int>(i);
        }
        return last_valid;  // numeric round-off: land on the last valid entry
    }

    // Gradient of log_prob(a) w.r.t. the logits: one-hot(a) - softmax, zero on
    // masked entries.
    std::vector<double> dlogp_dlogits(int a) const {
        std::vector<double> g(logp.size(), 0.0);
        for (size_t i = 0; i < logp.size(); ++i)
            if (mask[i]) g[i] = -std::exp(logp[i]);
        g[static_cast<size_t>(a)] += 1.0;
        return g;
    }
};

inline int argmax_valid(const std::vector<double>& logits, const std::vector<uint8_t>& valid) {
    int best = -1;
    for (size_t i = 0; i < logits.size(); ++i) {
        if (!valid[i]) continue;
        if (best < 0 || logits[i] > logits[static_cast<size_t>(best)]) best = static_cast<int>(i);
    }
    if (best < 0) throw std::invalid_argument("argmax_valid: no valid action");
    return best;
}

// ---- checkpoint serialization ----

inline constexpr int kCheckpointVersion = 1;

inline std::vector<double> flatten(const Mlp& net) {
    std::vector<double> out;
    out.reserve(net.param_count());
    for (size_t l = 0; l < net.w.size(); ++l) {
        out.insert(out.end(), net.w[l].begin(), net.w[l].end());
        out.insert(out.end(), net.b[l].begin(), net.b[l].end());
    }
    return out;
}

inline void unflatten(Mlp& net, const double* data, size_t count) {
    if (count != net.param_count())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    size_t k = 0;
    for (size_t l = 0; l < net.w.size(); ++l) {
        for (auto& x : net.w[l]) x = data[k++];
        for (auto& x : net.b[l]) x = data[k++];
    }
}

// Writes <base>.json (manifest) and <base>.bin (flat float64 parameters).
inline void checkpoint_save(const std::string& base,
                            const std::vector<std::pair<std::string, const Mlp*>>& nets,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["extra"] = extra;
    auto& arr = manifest["nets"] = nlohmann::json::array();
    std::vector<double> blob;
    for (const auto& [name, net] : nets) {
        nlohmann::json e;
        e["name"] = name;
        e["sizes"] = net->sizes;
        e["offset"] = blob.size();
        e["count"] = net->param_count();
        arr.push_back(e);
        auto flat = flatten(*net);
        blob.insert(blob.end(), flat.begin(), flat.end());
    }
    manifest["total_params"] = blob.size();

    std::ofstream mf(base + ".json");
    if (!mf) throw std::runtime_error("checkpoint: cannot write " + base + ".json");
    mf << manifest.dump(2) << "\n";
    mf.close();

    std::ofstream bf(base + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint: cannot write " + base + ".bin");
    bf.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(double)));
}

// Loads parameters into the given nets (shapes must match the manifest) and
// returns the manifest's "extra" payload.
inline nlohmann::json checkpoint_load(const std::string& base,
                                      const std::vector<std::pair<std::string, Mlp*>>& nets) {
    std::ifstream mf(base + ".json");
    if (!mf) throw std::runtime_error("checkpoint: cannot read " + base + ".json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.at("format_version").get<int>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format version");

    std::ifstream bf(base + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint: cannot read " + base + ".bin");
    const size_t total = manifest.at("total_params").get<size_t>();
    std::vector<double> blob(total);
    bf.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    if (static_cast<size_t>(bf.gcount()) != total * sizeof(double))
        throw std::runtime_error("checkpoint: parameter blob truncated");

    size_t loaded = 0;
    for (const auto& entry : manifest.at("nets")) {
        const std::string name = entry.at("name").get<std::string>();
        Mlp* target = nullptr;
        for (const auto& [n, net] : nets)
            if (n == name) target = net;
        if (!target) continue;  // callers may load a subset (e.g. actors only)
        if (entry.at("sizes").get<std::vector<int>>() != target->sizes)
            throw std::runtime_error("checkpoint: net '" + name + "' shape mismatch");
        const size_t off = entry.at("offset").get<size_t>();
        const size_t count = entry.at("count").get<size_t>();
        if (off + count > blob.size()) throw std::runtime_error("checkpoint: blob overrun");
        unflatten(*target, blob.data() + off, count);
        ++loaded;
    }
    if (loaded != nets.size())
        throw std::runtime_error("checkpoint: a requested net is missing from the manifest");
    return manifest.at("extra");
}

}  // namespace istn::nn
