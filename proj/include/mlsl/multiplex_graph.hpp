#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mlsl/rng.hpp"

namespace mlsl {

using node_t = std::int32_t;

/// A node's instance in one layer. Each replica carries its own state.
struct ReplicaId {
    node_t node = 0;
    int layer = 0;

    friend auto operator<=>(const ReplicaId&, const ReplicaId&) = default;
};

/// Link classes are numbered 0..L-1 for the intra-layer links of each layer
/// and L for interlinks, matching the layout of per-class delay vectors.
struct Neighbor {
    std::size_t flat;
    int link_class;
};

/// One layer: undirected simple graph on [0, node_count).
class LayerGraph {
public:
    using edge_t = std::pair<node_t, node_t>;

    LayerGraph() = default;

    /// Edges are normalized to (min, max) and sorted. Self-loops, duplicates
    /// and out-of-range endpoints are rejected.
    LayerGraph(node_t node_count, std::vector<edge_t> edges) : node_count_(node_count) {
        if (node_count < 0)
            throw std::invalid_argument("layer node count must be non-negative");
        for (auto& [u, v] : edges) {
            if (u < 0 || v < 0 || u >= node_count || v >= node_count)
                throw std::invalid_argument("edge endpoint out of range: " + std::to_string(u) +
                                            " " + std::to_string(v));
            if (u == v)
                throw std::invalid_argument("self-loop on node " + std::to_string(u));
            if (u > v)
                std::swap(u, v);
        }
        std::sort(edges.begin(), edges.end());
        if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
            throw std::invalid_argument("duplicate edge in layer");
        edges_ = std::move(edges);

        adjacency_.assign(static_cast<std::size_t>(node_count), {});
        for (const auto& [u, v] : edges_) {
            adjacency_[u].push_back(v);
            adjacency_[v].push_back(u);
        }
        for (auto& list : adjacency_)
            std::sort(list.begin(), list.end());
    }

    node_t node_count() const noexcept { return node_count_; }
    std::size_t edge_count() const noexcept { return edges_.size(); }
    const std::vector<edge_t>& edges() const noexcept { return edges_; }
    const std::vector<node_t>& neighbors(node_t u) const { return adjacency_.at(u); }
    std::size_t degree(node_t u) const { return adjacency_.at(u).size(); }

    friend bool operator==(const LayerGraph& a, const LayerGraph& b) {
        return a.node_count_ == b.node_count_ && a.edges_ == b.edges_;
    }

private:
    node_t node_count_ = 0;
    std::vector<edge_t> edges_;
    std::vector<std::vector<node_t>> adjacency_;
};

/// L layers over the same node set, every node linked to all of its
/// replicas. Interlinks are implied by the coupling rule and never stored.
/// Immutable after construction.
class MultiplexGraph {
public:
    MultiplexGraph() = default;

    explicit MultiplexGraph(std::vector<LayerGraph> layers) : layers_(std::move(layers)) {
        if (layers_.empty())
            throw std::invalid_argument("multiplex graph needs at least one layer");
        for (const auto& layer : layers_)
            if (layer.node_count() != layers_.front().node_count())
                throw std::invalid_argument("all layers must have the same node count");
    }

    int layer_count() const noexcept { return static_cast<int>(layers_.size()); }
    node_t nodes_per_layer() const noexcept {
        return layers_.empty() ? 0 : layers_.front().node_count();
    }
    std::size_t replica_count() const noexcept {
        return layers_.size() * static_cast<std::size_t>(nodes_per_layer());
    }
    const LayerGraph& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
    const std::vector<LayerGraph>& layers() const noexcept { return layers_; }

    std::size_t intra_edge_count() const noexcept {
        std::size_t m = 0;
        for (const auto& layer : layers_)
            m += layer.edge_count();
        return m;
    }
    std::size_t interlink_count() const noexcept {
        const std::size_t L = layers_.size();
        return static_cast<std::size_t>(nodes_per_layer()) * L * (L - 1) / 2;
    }

    bool valid(ReplicaId r) const noexcept {
        return r.layer >= 0 && r.layer < layer_count() && r.node >= 0 && r.node < nodes_per_layer();
    }

    std::size_t flat_index(ReplicaId r) const {
        if (!valid(r))
            throw std::out_of_range("replica out of range: node " + std::to_string(r.node) +
                                    " layer " + std::to_string(r.layer));
        return static_cast<std::size_t>(r.layer) * static_cast<std::size_t>(nodes_per_layer()) +
               static_cast<std::size_t>(r.node);
    }

    ReplicaId replica(std::size_t flat) const {
        if (flat >= replica_count())
            throw std::out_of_range("flat replica index out of range: " + std::to_string(flat));
        const auto n = static_cast<std::size_t>(nodes_per_layer());
        return {static_cast<node_t>(flat % n), static_cast<int>(flat / n)};
    }

    /// Visit every neighbor of a replica in ascending flat-index order:
    /// images in lower layers, then intra-layer neighbors, then images in
    /// higher layers.
    template <class F>
    void for_each_neighbor(std::size_t flat, F&& f) const {
        const auto n = static_cast<std::size_t>(nodes_per_layer());
        const auto node = static_cast<node_t>(flat % n);
        const int own = static_cast<int>(flat / n);
        const int inter = layer_count();
        for (int l = 0; l < own; ++l)
            f(Neighbor{static_cast<std::size_t>(l) * n + node, inter});
        const std::size_t base = static_cast<std::size_t>(own) * n;
        for (node_t w : layers_[own].neighbors(node))
            f(Neighbor{base + static_cast<std::size_t>(w), own});
        for (int l = own + 1; l < layer_count(); ++l)
            f(Neighbor{static_cast<std::size_t>(l) * n + node, inter});
    }

    std::vector<Neighbor> neighbors(ReplicaId r) const {
        std::vector<Neighbor> out;
        for_each_neighbor(flat_index(r), [&](Neighbor nb) { out.push_back(nb); });
        return out;
    }

    std::size_t degree(std::size_t flat) const {
        const ReplicaId r = replica(flat);
        return layers_[r.layer].degree(r.node) + layers_.size() - 1;
    }

    bool is_interlink_class(int link_class) const noexcept { return link_class == layer_count(); }

    friend bool operator==(const MultiplexGraph& a, const MultiplexGraph& b) {
        return a.layers_ == b.layers_;
    }

private:
    std::vector<LayerGraph> layers_;
};

inline MultiplexGraph couple_multiplex(std::vector<LayerGraph> layers) {
    return MultiplexGraph(std::move(layers));
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

enum class GraphModel { ER, BA };

inline std::string to_string(GraphModel m) { return m == GraphModel::ER ? "ER" : "BA"; }

inline GraphModel parse_model(const std::string& s) {
    if (s == "ER" || s == "er")
        return GraphModel::ER;
    if (s == "BA" || s == "ba")
        return GraphModel::BA;
    throw std::invalid_argument("unknown graph model '" + s + "' (expected ER or BA)");
}

/// G(n, p) with p = k_avg / (n - 1). Pairs are visited in lexicographic
/// order with geometric skips between successes.
inline LayerGraph generate_er_layer(node_t n, double k_avg, rng_t& rng) {
    if (n < 2)
        throw std::invalid_argument("ER layer needs n >= 2");
    if (!(k_avg > 0.0) || k_avg > static_cast<double>(n - 1))
        throw std::invalid_argument("ER mean degree must lie in (0, n-1]");
    const double p = k_avg / static_cast<double>(n - 1);

    std::vector<LayerGraph::edge_t> edges;
    if (p >= 1.0) {
        edges.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
        for (node_t u = 0; u < n; ++u)
            for (node_t v = u + 1; v < n; ++v)
                edges.emplace_back(u, v);
        return LayerGraph(n, std::move(edges));
    }

    const auto pairs = static_cast<std::int64_t>(n) * (n - 1) / 2;
    edges.reserve(static_cast<std::size_t>(static_cast<double>(pairs) * p * 1.1) + 16);
    std::geometric_distribution<std::int64_t> skip(p);

    // Walk the linearized upper triangle; (u, v) tracks position `pos`.
    std::int64_t pos = -1;
    node_t u = 0;
    std::int64_t row_end = n - 1; // exclusive end of row u in linear index
    std::int64_t row_start = 0;
    for (;;) {
        pos += 1 + skip(rng);
        if (pos >= pairs)
            break;
        while (pos >= row_end) {
            row_start = row_end;
            ++u;
            row_end += n - 1 - u;
        }
        const auto v = static_cast<node_t>(u + 1 + (pos - row_start));
        edges.emplace_back(u, v);
    }
    return LayerGraph(n, std::move(edges));
}

/// Preferential attachment: nodes 0..m-1 form a clique, each later node j
/// links to m distinct earlier nodes drawn proportionally to degree. Labels
/// follow insertion order.
inline LayerGraph generate_ba_layer(node_t n, int m, rng_t& rng) {
    if (m < 1 || m >= n)
        throw std::invalid_argument("BA attachment count must satisfy 1 <= m < n");

    std::vector<LayerGraph::edge_t> edges;
    edges.reserve(static_cast<std::size_t>(m) * n);
    // Every edge endpoint appears once; uniform draws from here are degree-weighted.
    std::vector<node_t> endpoints;
    endpoints.reserve(2 * static_cast<std::size_t>(m) * n);

    for (node_t u = 0; u < m; ++u)
        for (node_t v = u + 1; v < m; ++v) {
            edges.emplace_back(u, v);
            endpoints.push_back(u);
            endpoints.push_back(v);
        }

    std::vector<node_t> targets;
    targets.reserve(static_cast<std::size_t>(m));
    for (node_t j = m; j < n; ++j) {
        targets.clear();
        if (endpoints.empty()) {
            // m == 1 with a single seed node: nothing has degree yet.
            targets.push_back(0);
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, endpoints.size() - 1);
            while (static_cast<int>(targets.size()) < m) {
                const node_t t = endpoints[pick(rng)];
                if (std::find(targets.begin(), targets.end(), t) == targets.end())
                    targets.push_back(t);
            }
        }
        for (node_t t : targets) {
            edges.emplace_back(t, j);
            endpoints.push_back(t);
            endpoints.push_back(j);
        }
    }
    return LayerGraph(n, std::move(edges));
}

/// Parameters for generating a whole multiplex graph.
struct GraphGenSpec {
    GraphModel model = GraphModel::ER;
    int layer_count = 2;
    node_t nodes_per_layer = 1000;
    double mean_degree = 8.0;
    std::uint64_t seed = 0;

    /// BA attachment count m = round(<k>/2).
    int ba_attachment() const { return static_cast<int>(std::floor(mean_degree / 2.0 + 0.5)); }

    void validate() const {
        if (layer_count < 1)
            throw std::invalid_argument("layer_count must be >= 1");
        if (nodes_per_layer < 2)
            throw std::invalid_argument("nodes_per_layer must be >= 2");
        if (model == GraphModel::ER) {
            const double p = mean_degree / static_cast<double>(nodes_per_layer - 1);
            if (!(p > 0.0) || p > 1.0)
                throw std::invalid_argument("ER edge probability <k>/(n-1) must lie in (0, 1]");
        } else {
            const int m = ba_attachment();
            if (m < 1 || m >= nodes_per_layer)
                throw std::invalid_argument("BA attachment round(<k>/2) must satisfy 1 <= m < n");
        }
    }
};

inline MultiplexGraph generate_multiplex(const GraphGenSpec& spec, rng_t& rng) {
    spec.validate();
    std::vector<LayerGraph> layers;
    layers.reserve(static_cast<std::size_t>(spec.layer_count));
    for (int l = 0; l < spec.layer_count; ++l) {
        if (spec.model == GraphModel::ER)
            layers.push_back(generate_er_layer(spec.nodes_per_layer, spec.mean_degree, rng));
        else
            layers.push_back(generate_ba_layer(spec.nodes_per_layer, spec.ba_attachment(), rng));
    }
    return couple_multiplex(std::move(layers));
}

inline MultiplexGraph generate_multiplex(const GraphGenSpec& spec) {
    rng_t rng(spec.seed);
    return generate_multiplex(spec, rng);
}

// ---------------------------------------------------------------------------
// Text format
//
//   L n_l model seed
//   layer u v          (one line per intra-layer edge)
//
// Interlinks are implied by the coupling rule.
// ---------------------------------------------------------------------------

struct GraphFile {
    MultiplexGraph graph;
    std::string model = "custom";
    std::uint64_t seed = 0;
};

inline void write_graph(std::ostream& os, const MultiplexGraph& g, const std::string& model,
                        std::uint64_t seed) {
    os << g.layer_count() << ' ' << g.nodes_per_layer() << ' ' << model << ' ' << seed << '\n';
    for (int l = 0; l < g.layer_count(); ++l)
        for (const auto& [u, v] : g.layer(l).edges())
            os << l << ' ' << u << ' ' << v << '\n';
}

inline GraphFile read_graph(std::istream& is) {
    std::string line;
    auto next_line = [&]() -> bool {
        while (std::getline(is, line)) {
            const auto first = line.find_first_not_of(" \t\r");
            if (first != std::string::npos && line[first] != '#')
                return true;
        }
        return false;
    };

    if (!next_line())
        throw std::runtime_error("graph file: missing header");
    GraphFile out;
    int L = 0;
    long long n = 0;
    {
        std::istringstream hs(line);
        if (!(hs >> L >> n >> out.model >> out.seed))
            throw std::runtime_error("graph file: malformed header '" + line + "'");
    }
    if (L < 1 || n < 1 || n > std::numeric_limits<node_t>::max())
        throw std::runtime_error("graph file: invalid header values");

    std::vector<std::vector<LayerGraph::edge_t>> edges(static_cast<std::size_t>(L));
    std::size_t lineno = 1;
    while (next_line()) {
        ++lineno;
        std::istringstream ls(line);
        int l = 0;
        long long u = 0, v = 0;
        if (!(ls >> l >> u >> v))
            throw std::runtime_error("graph file: malformed edge line '" + line + "'");
        if (l < 0 || l >= L)
            throw std::runtime_error("graph file: layer out of range in '" + line + "'");
        edges[static_cast<std::size_t>(l)].emplace_back(static_cast<node_t>(u),
                                                        static_cast<node_t>(v));
    }
    std::vector<LayerGraph> layers;
    layers.reserve(edges.size());
    for (auto& e : edges)
        layers.emplace_back(static_cast<node_t>(n), std::move(e));
    out.graph = MultiplexGraph(std::move(layers));
    return out;
}

} // namespace mlsl
