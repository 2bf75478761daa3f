#pragma once

#include "gcmcg/autodiff.hpp"
#include "gcmcg/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace gcmcg::graph {

struct ElectrodeGraph {
    std::size_t node_count = 0;
    std::vector<std::vector<std::size_t>> adjacency; // sorted neighbor lists, 0-based
    std::vector<std::ptrdiff_t> electrode_map;       // node -> dataset channel, -1 if unmapped
    std::vector<std::uint8_t> mask;                  // 1 = node participates

    std::vector<std::size_t> unmasked_nodes() const;
    void validate() const;
};

// Adjacency file: one line per node, "node: n1 n2 n3" (1-based).
// Electrode map file: "graph_node dataset_channel" pairs (1-based).
// Nodes without a mapped dataset channel are masked out; a nonempty
// mask_override replaces the derived mask (0-based node indices to keep).
ElectrodeGraph load_graph(const std::string& adjacency_path,
                          const std::string& electrode_map_path,
                          const std::vector<std::size_t>& mask_override = {});

// identity-mapped graph for C channels built from channel groups: groups are
// cliques, consecutive groups joined by one bridge edge
ElectrodeGraph grouped_graph(std::size_t channels,
                             const std::vector<std::vector<std::size_t>>& groups);

struct TokenizerState {
    Tensor features; // node_count x F
    std::uint32_t version = 1;
    std::uint64_t seed = 0; // provenance, not serialized
};

// Spectral 2-D layout of the adjacency tiled across F dims plus small seeded
// noise; masked rows zeroed.
TokenizerState tokenizer_init(const ElectrodeGraph& g, std::size_t feature_dim,
                              std::uint64_t seed);

void tokenizer_save(const TokenizerState& t, const std::string& path);
TokenizerState tokenizer_load(const std::string& path);

struct GatConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;      // hidden layers; the final layer averages
    std::size_t token_dim = 16; // F
    std::size_t embed_dim = 32; // D
    double leaky_slope = 0.2;
};

// name -> shape of every GAT parameter ("gat.l<t>.h<h>.W" / ".a")
std::vector<std::pair<std::string, std::vector<std::size_t>>> gat_param_shapes(
    const GatConfig& cfg);

struct GatLayerVars {
    std::vector<ad::Var> W; // per head, in_dim x head_dim
    std::vector<ad::Var> a; // per head, 2*head_dim
};

// Multi-head GAT: hidden layers concatenate heads under ELU, the final layer
// averages under identity. Masked nodes are excluded from every neighborhood
// and produce zero rows; an unmasked node with no unmasked neighbors
// attends to itself.
ad::Var gat_forward(ad::Tape& tape, const ad::Var& theta0, const ElectrodeGraph& g,
                    const std::vector<GatLayerVars>& layers, const GatConfig& cfg);

// Forward-only attention map for one (W, a) head; keys are (i, j) node pairs.
std::map<std::pair<std::size_t, std::size_t>, double> attention_coefficients(
    const Tensor& theta, const ElectrodeGraph& g, const Tensor& W, const Tensor& a,
    double leaky_slope = 0.2);

} // namespace gcmcg::graph
