#include "gcmcg/graph.hpp"
#include "gcmcg/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace gcmcg::graph {

using ad::Var;

std::vector<std::size_t> ElectrodeGraph::unmasked_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < node_count; ++i)
        if (mask[i]) out.push_back(i);
    return out;
}

void ElectrodeGraph::validate() const {
    if (adjacency.size() != node_count || mask.size() != node_count ||
        electrode_map.size() != node_count)
        throw error("graph: inconsistent sizes");
    std::string bad;
    for (std::size_t i = 0; i < node_count; ++i) {
        for (std::size_t j : adjacency[i]) {
            if (j >= node_count)
                throw error("graph: neighbor index " + std::to_string(j + 1) + " out of range");
            if (j == i) throw error("graph: self loop at node " + std::to_string(i + 1));
            if (!std::binary_search(adjacency[j].begin(), adjacency[j].end(), i)) {
                if (!bad.empty()) bad += ", ";
                bad += std::to_string(i + 1) + "->" + std::to_string(j + 1);
            }
        }
    }
    if (!bad.empty()) throw error("graph: asymmetric adjacency pairs: " + bad);

    std::vector<std::ptrdiff_t> seen;
    for (std::ptrdiff_t ch : electrode_map) {
        if (ch < 0) continue;
        if (std::find(seen.begin(), seen.end(), ch) != seen.end())
            throw error("graph: duplicate electrode mapping to channel " + std::to_string(ch + 1));
        seen.push_back(ch);
    }
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

bool blank_or_comment(const std::string& s) {
    for (char c : s) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

} // namespace

ElectrodeGraph load_graph(const std::string& adjacency_path,
                          const std::string& electrode_map_path,
                          const std::vector<std::size_t>& mask_override) {
    ElectrodeGraph g;
    std::vector<std::pair<std::size_t, std::vector<std::size_t>>> entries;
    std::size_t max_node = 0;
    for (const std::string& line : read_lines(adjacency_path)) {
        if (blank_or_comment(line)) continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            throw error("adjacency: missing ':' in line \"" + line + "\"");
        std::size_t node = 0;
        try {
            node = static_cast<std::size_t>(std::stoul(line.substr(0, colon)));
        } catch (...) {
            throw error("adjacency: bad node id in line \"" + line + "\"");
        }
        if (node == 0) throw error("adjacency: node ids are 1-based");
        std::istringstream rest(line.substr(colon + 1));
        std::vector<std::size_t> nbrs;
        std::size_t v;
        while (rest >> v) {
            if (v == 0) throw error("adjacency: neighbor ids are 1-based");
            nbrs.push_back(v - 1);
            max_node = std::max(max_node, v);
        }
        max_node = std::max(max_node, node);
        entries.emplace_back(node - 1, std::move(nbrs));
    }
    if (max_node == 0) throw error("adjacency: empty file " + adjacency_path);

    g.node_count = max_node;
    g.adjacency.assign(max_node, {});
    for (auto& [node, nbrs] : entries) {
        g.adjacency[node] = std::move(nbrs);
        std::sort(g.adjacency[node].begin(), g.adjacency[node].end());
        g.adjacency[node].erase(
            std::unique(g.adjacency[node].begin(), g.adjacency[node].end()),
            g.adjacency[node].end());
    }

    g.electrode_map.assign(max_node, -1);
    for (const std::string& line : read_lines(electrode_map_path)) {
        if (blank_or_comment(line)) continue;
        std::istringstream is(line);
        std::size_t node, channel;
        if (!(is >> node >> channel))
            throw error("electrode map: bad line \"" + line + "\"");
        if (node == 0 || channel == 0) throw error("electrode map: ids are 1-based");
        if (node > max_node)
            throw error("electrode map: node " + std::to_string(node) + " out of range");
        if (g.electrode_map[node - 1] >= 0)
            throw error("electrode map: duplicate mapping for node " + std::to_string(node));
        g.electrode_map[node - 1] = static_cast<std::ptrdiff_t>(channel - 1);
    }

    g.mask.assign(max_node, 0);
    if (mask_override.empty()) {
        for (std::size_t i = 0; i < max_node; ++i) g.mask[i] = g.electrode_map[i] >= 0 ? 1 : 0;
    } else {
        for (std::size_t i : mask_override) {
            if (i >= max_node) throw error("mask: node index out of range");
            g.mask[i] = 1;
        }
    }
    g.validate();
    return g;
}

ElectrodeGraph grouped_graph(std::size_t channels,
                             const std::vector<std::vector<std::size_t>>& groups) {
    ElectrodeGraph g;
    g.node_count = channels;
    g.adjacency.assign(channels, {});
    g.electrode_map.resize(channels);
    g.mask.assign(channels, 1);
    for (std::size_t i = 0; i < channels; ++i)
        g.electrode_map[i] = static_cast<std::ptrdiff_t>(i);

    auto connect = [&](std::size_t a, std::size_t b) {
        if (a == b) return;
        if (!std::binary_search(g.adjacency[a].begin(), g.adjacency[a].end(), b)) {
            g.adjacency[a].insert(
                std::upper_bound(g.adjacency[a].begin(), g.adjacency[a].end(), b), b);
            g.adjacency[b].insert(
                std::upper_bound(g.adjacency[b].begin(), g.adjacency[b].end(), a), a);
        }
    };
    for (const auto& grp : groups)
        for (std::size_t i = 0; i < grp.size(); ++i)
            for (std::size_t j = i + 1; j < grp.size(); ++j) {
                if (grp[i] >= channels || grp[j] >= channels)
                    throw error("grouped_graph: channel index out of range");
                connect(grp[i], grp[j]);
            }
    for (std::size_t k = 0; k + 1 < groups.size(); ++k) {
        if (!groups[k].empty() && !groups[k + 1].empty())
            connect(groups[k].back(), groups[k + 1].front());
    }
    // attach channels not covered by any group to the previous channel so the
    // graph stays connected
    std::vector<bool> covered(channels, false);
    for (const auto& grp : groups)
        for (std::size_t c : grp) covered[c] = true;
    for (std::size_t c = 0; c < channels; ++c)
        if (!covered[c] && c > 0) connect(c, c - 1);
    g.validate();
    return g;
}

// ---- tokenizer -----------------------------------------------------------------

TokenizerState tokenizer_init(const ElectrodeGraph& g, std::size_t feature_dim,
                              std::uint64_t seed) {
    const std::size_t n = g.node_count;
    if (feature_dim == 0) throw error("tokenizer: feature_dim must be positive");

    // spectral layout: two smallest informative Laplacian eigenvectors
    linalg::Mat lap(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        lap(i, i) = static_cast<double>(g.adjacency[i].size());
        for (std::size_t j : g.adjacency[i]) lap(i, j) -= 1.0;
    }
    auto eig = linalg::jacobi_eigen(lap);
    const double scale = std::max(std::fabs(eig.values.back()), 1.0);
    // low-frequency Laplacian modes as layout coordinates; the first two act
    // as the 2-D scalp layout, two more keep distant regions distinguishable
    // after attention smoothing
    const std::size_t want = std::min<std::size_t>(4, std::max<std::size_t>(2, feature_dim));
    std::vector<std::vector<double>> coords;
    for (std::size_t j = 0; j < n && coords.size() < want; ++j) {
        if (eig.values[j] <= 1e-9 * scale) continue;
        std::vector<double> c(n);
        for (std::size_t i = 0; i < n; ++i) c[i] = eig.vectors(i, j);
        coords.push_back(std::move(c));
    }
    while (coords.size() < 2) {
        // degenerate graph: fall back to node order
        std::vector<double> c(n);
        for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<double>(i);
        coords.push_back(std::move(c));
    }
    for (auto& c : coords) {
        auto [mn, mx] = std::minmax_element(c.begin(), c.end());
        const double span = *mx - *mn;
        for (double& v : c) v = span > 0.0 ? 2.0 * (v - *mn) / span - 1.0 : 0.0;
    }

    TokenizerState t;
    t.seed = seed;
    t.features = Tensor({n, feature_dim});
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < feature_dim; ++f)
            t.features.at(i, f) = coords[f % coords.size()][i] + noise(rng);
        if (!g.mask[i])
            for (std::size_t f = 0; f < feature_dim; ++f) t.features.at(i, f) = 0.0;
    }
    return t;
}

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint64_t byte_sum(const std::string& buf) {
    std::uint64_t s = 0;
    for (unsigned char c : buf) s += c;
    return s;
}

} // namespace

void tokenizer_save(const TokenizerState& t, const std::string& path) {
    if (t.features.rank() != 2) throw error("tokenizer_save: features must be rank-2");
    std::string buf = "GTOK";
    put_u32(buf, t.version);
    put_u32(buf, static_cast<std::uint32_t>(t.features.dim(0)));
    put_u32(buf, static_cast<std::uint32_t>(t.features.dim(1)));
    for (std::size_t i = 0; i < t.features.size(); ++i) put_f64(buf, t.features.at(i));
    const std::uint64_t sum = byte_sum(buf);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((sum >> (8 * i)) & 0xff));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("tokenizer_save: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

TokenizerState tokenizer_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("tokenizer_load: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 + 4 + 4 + 4 + 8) throw error("tokenizer_load: truncated file");
    if (buf.compare(0, 4, "GTOK") != 0) throw error("tokenizer_load: bad magic bytes");

    auto get_u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
        return v;
    };
    const std::uint32_t version = get_u32(4);
    if (version != 1) throw error("tokenizer_load: unsupported version " + std::to_string(version));
    const std::uint32_t rows = get_u32(8), cols = get_u32(12);
    const std::size_t expect = 16 + static_cast<std::size_t>(rows) * cols * 8 + 8;
    if (buf.size() != expect)
        throw error("tokenizer_load: size mismatch (" + std::to_string(buf.size()) + " vs " +
                    std::to_string(expect) + ")");

    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[buf.size() - 8 + i]))
                  << (8 * i);
    const std::uint64_t sum = byte_sum(buf.substr(0, buf.size() - 8));
    if (stored != sum) throw error("tokenizer_load: checksum failure");

    TokenizerState t;
    t.version = version;
    t.features = Tensor({rows, cols});
    for (std::size_t i = 0; i < t.features.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[16 + i * 8 + b]))
                    << (8 * b);
        double v;
        std::memcpy(&v, &bits, 8);
        t.features.at(i) = v;
    }
    return t;
}

// ---- GAT -----------------------------------------------------------------------

std::vector<std::pair<std::string, std::vector<std::size_t>>> gat_param_shapes(
    const GatConfig& cfg) {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
    std::size_t in_dim = cfg.token_dim;
    for (std::size_t t = 0; t < cfg.layers; ++t) {
        const bool final_layer = (t + 1 == cfg.layers);
        const std::size_t heads = final_layer ? 1 : cfg.heads;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::string base = "gat.l" + std::to_string(t) + ".h" + std::to_string(h);
            shapes.emplace_back(base + ".W", std::vector<std::size_t>{in_dim, cfg.embed_dim});
            shapes.emplace_back(base + ".a", std::vector<std::size_t>{2 * cfg.embed_dim});
        }
        in_dim = final_layer ? cfg.embed_dim : cfg.heads * cfg.embed_dim;
    }
    return shapes;
}

namespace {

Var gat_head(ad::Tape& tape, const Var& theta, const ElectrodeGraph& g, const Var& W,
             const Var& a, double slope) {
    const std::size_t d = W.value().dim(1);
    Var H = ad::matmul(theta, W);
    Var a_l = ad::slice1d(a, 0, d);
    Var a_r = ad::slice1d(a, d, d);
    Var s_l = ad::matvec(H, a_l);
    Var s_r = ad::matvec(H, a_r);

    std::vector<Var> rows;
    rows.reserve(g.node_count);
    for (std::size_t i = 0; i < g.node_count; ++i) {
        if (!g.mask[i]) {
            rows.push_back(tape.constant(Tensor::zeros({d})));
            continue;
        }
        std::vector<std::size_t> nbrs;
        for (std::size_t j : g.adjacency[i])
            if (g.mask[j]) nbrs.push_back(j);
        if (nbrs.empty()) nbrs.push_back(i); // self-passthrough

        Var e = ad::leaky_relu(
            ad::add_scalar(ad::gather1d(s_r, nbrs), ad::gather1d(s_l, {i})), slope);
        Var alpha = ad::softmax(e);
        rows.push_back(ad::vecmat(alpha, ad::gather_rows(H, nbrs)));
    }
    return ad::stack_rows(rows);
}

} // namespace

ad::Var gat_forward(ad::Tape& tape, const ad::Var& theta0, const ElectrodeGraph& g,
                    const std::vector<GatLayerVars>& layers, const GatConfig& cfg) {
    if (layers.size() != cfg.layers) throw error("gat_forward: layer count mismatch");
    Var theta = theta0;
    for (std::size_t t = 0; t < cfg.layers; ++t) {
        const bool final_layer = (t + 1 == cfg.layers);
        const std::size_t heads = final_layer ? 1 : cfg.heads;
        if (layers[t].W.size() != heads || layers[t].a.size() != heads)
            throw error("gat_forward: head count mismatch at layer " + std::to_string(t));
        std::vector<Var> head_outputs;
        for (std::size_t h = 0; h < heads; ++h)
            head_outputs.push_back(
                gat_head(tape, theta, g, layers[t].W[h], layers[t].a[h], cfg.leaky_slope));
        if (final_layer) {
            Var acc = head_outputs[0];
            for (std::size_t h = 1; h < head_outputs.size(); ++h)
                acc = ad::add(acc, head_outputs[h]);
            theta = ad::scale_const(acc, 1.0 / static_cast<double>(head_outputs.size()));
        } else {
            theta = ad::elu(ad::concat_cols(head_outputs));
        }
    }
    return theta;
}

std::map<std::pair<std::size_t, std::size_t>, double> attention_coefficients(
    const Tensor& theta, const ElectrodeGraph& g, const Tensor& W, const Tensor& a,
    double leaky_slope) {
    ad::Tape tape;
    const std::size_t d = W.dim(1);
    Var th = tape.constant(theta);
    Var Wv = tape.constant(W);
    Var av = tape.constant(a);
    Var H = ad::matmul(th, Wv);
    Var s_l = ad::matvec(H, ad::slice1d(av, 0, d));
    Var s_r = ad::matvec(H, ad::slice1d(av, d, d));

    std::map<std::pair<std::size_t, std::size_t>, double> out;
    for (std::size_t i = 0; i < g.node_count; ++i) {
        if (!g.mask[i]) continue;
        std::vector<std::size_t> nbrs;
        for (std::size_t j : g.adjacency[i])
            if (g.mask[j]) nbrs.push_back(j);
        if (nbrs.empty()) continue;
        Var e = ad::leaky_relu(
            ad::add_scalar(ad::gather1d(s_r, nbrs), ad::gather1d(s_l, {i})), leaky_slope);
        Var alpha = ad::softmax(e);
        for (std::size_t k = 0; k < nbrs.size(); ++k)
            out[{i, nbrs[k]}] = alpha.value().at(k);
    }
    return out;
}

} // namespace gcmcg::graph
