#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "mlsl/multiplex_graph.hpp"
#include "mlsl/observation.hpp"
#include "mlsl/parallel.hpp"
#include "mlsl/spread_sim.hpp"

namespace mlsl {

namespace detail {

/// Two path weights are treated as equal when they differ by rounding only.
inline bool same_weight(double a, double b) noexcept {
    return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
}

} // namespace detail

/// Shortest weighted paths from a candidate root to every reporting
/// observer. Link weights are the per-class mean delays. Among equally short
/// alternatives the lowest flat-index predecessor wins, so the tree is
/// unique. Only the union of the root->observer paths is kept.
struct PathTree {
    static constexpr std::int64_t none = -1;

    std::size_t root = 0;
    /// Per flat index: parent in the tree (none for the root and for
    /// replicas outside the tree) and the link class of that edge.
    std::vector<std::int64_t> parent;
    std::vector<int> parent_class;
    std::vector<bool> in_tree;
    /// Hop count and accumulated variance from the root, valid on tree nodes.
    std::vector<int> depth;
    std::vector<double> variance_depth;
    /// Observer flat indices in reporting order and their mu-weighted
    /// distance from the root (+inf when unreachable).
    std::vector<std::size_t> observers;
    std::vector<double> path_weight;

    bool covers_all() const {
        return std::all_of(path_weight.begin(), path_weight.end(),
                           [](double w) { return std::isfinite(w); });
    }

    std::size_t lowest_common_ancestor(std::size_t a, std::size_t b) const {
        while (depth[a] > depth[b])
            a = static_cast<std::size_t>(parent[a]);
        while (depth[b] > depth[a])
            b = static_cast<std::size_t>(parent[b]);
        while (a != b) {
            a = static_cast<std::size_t>(parent[a]);
            b = static_cast<std::size_t>(parent[b]);
        }
        return a;
    }
};

inline PathTree build_path_tree(const MultiplexGraph& g, std::size_t root,
                                const std::vector<std::size_t>& observers,
                                const DelayMoments& moments) {
    const std::size_t n = g.replica_count();
    if (root >= n)
        throw std::out_of_range("candidate root out of range");
    if (moments.layer_count() != g.layer_count())
        throw std::invalid_argument("delay moments do not match the graph's layer count");

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(n, inf);
    std::vector<std::int64_t> pred(n, PathTree::none);
    std::vector<int> pred_class(n, -1);
    std::vector<int> hops(n, 0);
    std::vector<double> var_depth(n, 0.0);
    std::vector<char> settled(n, 0);

    std::vector<char> wanted(n, 0);
    std::size_t remaining = 0;
    for (std::size_t o : observers) {
        if (o >= n)
            throw std::out_of_range("observer out of range");
        if (!wanted[o]) {
            wanted[o] = 1;
            ++remaining;
        }
    }

    using entry = std::pair<double, std::size_t>;
    std::priority_queue<entry, std::vector<entry>, std::greater<>> queue;
    dist[root] = 0.0;
    queue.emplace(0.0, root);
    while (!queue.empty() && remaining > 0) {
        const auto [du, u] = queue.top();
        queue.pop();
        if (settled[u] || du > dist[u])
            continue;
        settled[u] = 1;
        if (pred[u] != PathTree::none) {
            const auto p = static_cast<std::size_t>(pred[u]);
            hops[u] = hops[p] + 1;
            var_depth[u] = var_depth[p] + moments.sigma2[static_cast<std::size_t>(pred_class[u])];
        }
        if (wanted[u])
            --remaining;

        g.for_each_neighbor(u, [&](Neighbor nb) {
            const std::size_t w = nb.flat;
            if (settled[w])
                return;
            const double nd = du + moments.mu[static_cast<std::size_t>(nb.link_class)];
            if (std::isfinite(dist[w]) && detail::same_weight(nd, dist[w])) {
                if (static_cast<std::int64_t>(u) < pred[w]) {
                    pred[w] = static_cast<std::int64_t>(u);
                    pred_class[w] = nb.link_class;
                }
            } else if (nd < dist[w]) {
                dist[w] = nd;
                pred[w] = static_cast<std::int64_t>(u);
                pred_class[w] = nb.link_class;
                queue.emplace(nd, w);
            }
        });
    }

    PathTree tree;
    tree.root = root;
    tree.parent.assign(n, PathTree::none);
    tree.parent_class.assign(n, -1);
    tree.in_tree.assign(n, false);
    tree.depth = std::move(hops);
    tree.variance_depth = std::move(var_depth);
    tree.observers = observers;
    tree.path_weight.reserve(observers.size());
    tree.in_tree[root] = true;
    for (std::size_t o : observers) {
        if (!settled[o]) {
            tree.path_weight.push_back(inf);
            continue;
        }
        tree.path_weight.push_back(dist[o]);
        for (std::size_t x = o; !tree.in_tree[x]; x = static_cast<std::size_t>(pred[x])) {
            tree.in_tree[x] = true;
            tree.parent[x] = pred[x];
            tree.parent_class[x] = pred_class[x];
        }
    }
    return tree;
}

/// mu_v[i] = |P(v, o_{i+1})| - |P(v, o_0)| in reporting order (o_0 is the
/// reference observer).
inline Eigen::VectorXd deterministic_delay(const PathTree& tree) {
    if (tree.path_weight.size() < 2)
        throw std::invalid_argument("need at least two reporting observers");
    const auto k = static_cast<Eigen::Index>(tree.path_weight.size() - 1);
    Eigen::VectorXd mu_v(k);
    for (Eigen::Index i = 0; i < k; ++i)
        mu_v[i] = tree.path_weight[static_cast<std::size_t>(i) + 1] - tree.path_weight[0];
    return mu_v;
}

/// Lambda[i][j] = variance weight of the links shared by the in-tree paths
/// o_{i+1} ~> o_0 and o_{j+1} ~> o_0. The shared part runs from o_0 to the
/// vertex where the two paths meet, so its weight is
/// (D(o_0,a) + D(o_0,b) - D(a,b)) / 2 for tree distance D, which expands to
///   s(o_0) - s(lca(o_0, a)) - s(lca(o_0, b)) + s(lca(a, b))
/// with s the accumulated variance from the root v.
inline Eigen::MatrixXd covariance(const PathTree& tree) {
    if (tree.observers.size() < 2)
        throw std::invalid_argument("need at least two reporting observers");
    if (!tree.covers_all())
        throw std::invalid_argument("path tree does not reach every observer");
    const std::size_t ref = tree.observers.front();
    const std::size_t k = tree.observers.size() - 1;
    const auto& s = tree.variance_depth;

    std::vector<double> to_ref(k);
    for (std::size_t i = 0; i < k; ++i)
        to_ref[i] = s[tree.lowest_common_ancestor(ref, tree.observers[i + 1])];

    Eigen::MatrixXd lambda(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t a = tree.observers[i + 1];
        for (std::size_t j = 0; j <= i; ++j) {
            const std::size_t b = tree.observers[j + 1];
            const double shared =
                s[ref] - to_ref[i] - to_ref[j] + s[tree.lowest_common_ancestor(a, b)];
            const auto ii = static_cast<Eigen::Index>(i);
            const auto jj = static_cast<Eigen::Index>(j);
            lambda(ii, jj) = shared;
            lambda(jj, ii) = shared;
        }
    }
    return lambda;
}

/// Ridge added before solving: max(1e-9 * max diagonal, 1e-12).
inline double ridge_for(const Eigen::MatrixXd& lambda) {
    const double max_diag = lambda.size() == 0 ? 0.0 : lambda.diagonal().maxCoeff();
    return std::max(1e-9 * max_diag, 1e-12);
}

/// mu_v^T Lambda^{-1} (d - mu_v / 2), solving against the ridged matrix via
/// Cholesky (LDLT as fallback). Returns -inf when the result is not finite.
inline double score(const Eigen::VectorXd& mu_v, const Eigen::MatrixXd& lambda,
                    const Eigen::VectorXd& d) {
    if (mu_v.size() != d.size() || lambda.rows() != d.size() || lambda.cols() != d.size())
        throw std::invalid_argument("score: dimension mismatch");
    if (mu_v.isZero(0.0))
        return 0.0;

    Eigen::MatrixXd ridged = lambda;
    ridged.diagonal().array() += ridge_for(lambda);
    const Eigen::VectorXd rhs = d - 0.5 * mu_v;

    double value = std::numeric_limits<double>::quiet_NaN();
    Eigen::LLT<Eigen::MatrixXd> llt(ridged);
    if (llt.info() == Eigen::Success) {
        value = mu_v.dot(llt.solve(rhs));
    } else {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(ridged);
        if (ldlt.info() == Eigen::Success)
            value = mu_v.dot(ldlt.solve(rhs));
    }
    if (!std::isfinite(value))
        return -std::numeric_limits<double>::infinity();
    return value;
}

struct CandidateScore {
    ReplicaId candidate;
    std::size_t flat = 0;
    double score = -std::numeric_limits<double>::infinity();
    bool valid = false;
    Eigen::VectorXd mu_v;
};

/// Scores are tied when equal to within 1e-9 relative (plus a 1e-12
/// absolute floor that absorbs rounding around zero).
inline bool scores_tied(double a, double b) noexcept {
    if (a == b)
        return true;
    if (!std::isfinite(a) || !std::isfinite(b))
        return false;
    return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)) + 1e-12;
}

/// Candidates in descending score order (ties by ascending flat index,
/// invalid candidates last) with explicit tie groups.
class SourceRanking {
public:
    SourceRanking() = default;

    explicit SourceRanking(std::vector<CandidateScore> scores) : entries_(std::move(scores)) {
        std::sort(entries_.begin(), entries_.end(),
                  [](const CandidateScore& a, const CandidateScore& b) {
                      if (a.valid != b.valid)
                          return a.valid;
                      if (a.score != b.score)
                          return a.score > b.score;
                      return a.flat < b.flat;
                  });
        group_.resize(entries_.size());
        std::size_t leader = 0;
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            if (k == 0) {
                group_begin_.push_back(0);
            } else {
                const auto& lead = entries_[leader];
                const auto& cur = entries_[k];
                const bool tied = lead.valid == cur.valid &&
                                  (!cur.valid || scores_tied(lead.score, cur.score));
                if (!tied) {
                    leader = k;
                    group_begin_.push_back(k);
                }
            }
            group_[k] = group_begin_.size() - 1;
        }
        group_begin_.push_back(entries_.size());

        position_.assign(entries_.size(), 0);
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            if (entries_[k].flat >= position_.size())
                position_.resize(entries_[k].flat + 1, 0);
            position_[entries_[k].flat] = k + 1;
        }
    }

    const std::vector<CandidateScore>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const CandidateScore& top() const { return entries_.front(); }

    std::size_t group_count() const noexcept {
        return group_begin_.empty() ? 0 : group_begin_.size() - 1;
    }
    /// Tie group index of the entry at position k (0-based).
    std::size_t group_of(std::size_t k) const { return group_.at(k); }
    std::size_t group_begin(std::size_t g) const { return group_begin_.at(g); }
    std::size_t group_end(std::size_t g) const { return group_begin_.at(g + 1); }
    std::size_t group_size(std::size_t g) const { return group_end(g) - group_begin(g); }
    std::size_t top_tie_size() const { return empty() ? 0 : group_size(0); }

    /// 0-based position of a candidate, or nullopt when it was not ranked.
    std::optional<std::size_t> position_of(std::size_t flat) const {
        if (flat >= position_.size() || position_[flat] == 0)
            return std::nullopt;
        return position_[flat] - 1;
    }

private:
    std::vector<CandidateScore> entries_;
    std::vector<std::size_t> group_;
    std::vector<std::size_t> group_begin_;
    std::vector<std::size_t> position_; // 1-based, 0 = absent
};

inline std::vector<std::size_t> reporting_flat(const MultiplexGraph& g, const DelayVector& dv) {
    std::vector<std::size_t> out;
    out.reserve(dv.reporting.size());
    for (ReplicaId r : dv.reporting)
        out.push_back(g.flat_index(r));
    return out;
}

/// Score a single candidate replica.
inline CandidateScore score_candidate(const MultiplexGraph& g, std::size_t candidate,
                                      const std::vector<std::size_t>& observers,
                                      const Eigen::VectorXd& d, const DelayMoments& moments) {
    CandidateScore out;
    out.flat = candidate;
    out.candidate = g.replica(candidate);
    const PathTree tree = build_path_tree(g, candidate, observers, moments);
    if (!tree.covers_all())
        return out;
    out.mu_v = deterministic_delay(tree);
    out.score = score(out.mu_v, covariance(tree), d);
    out.valid = std::isfinite(out.score);
    return out;
}

/// Score every candidate (all replicas when `candidates` is empty) and rank
/// them. Candidates are independent and run on `threads` workers; results
/// are merged by candidate index.
inline SourceRanking rank_sources(const MultiplexGraph& g, const DelayVector& dv,
                                  const DelayMoments& moments, unsigned threads = 1,
                                  std::vector<std::size_t> candidates = {}) {
    if (dv.budget() < 2)
        throw std::invalid_argument("rank_sources needs at least two reporting observers");
    if (dv.d.size() + 1 != dv.reporting.size())
        throw std::invalid_argument("delay vector and reporting list disagree in length");
    if (candidates.empty()) {
        candidates.resize(g.replica_count());
        for (std::size_t i = 0; i < candidates.size(); ++i)
            candidates[i] = i;
    }

    const std::vector<std::size_t> observers = reporting_flat(g, dv);
    Eigen::VectorXd d(static_cast<Eigen::Index>(dv.d.size()));
    for (std::size_t i = 0; i < dv.d.size(); ++i)
        d[static_cast<Eigen::Index>(i)] = dv.d[i];

    std::vector<CandidateScore> scores(candidates.size());
    parallel_for(candidates.size(), threads, [&](std::size_t i) {
        scores[i] = score_candidate(g, candidates[i], observers, d, moments);
    });
    return SourceRanking(std::move(scores));
}

} // namespace mlsl
