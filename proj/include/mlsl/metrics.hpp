#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mlsl/locator.hpp"
#include "mlsl/rng.hpp"

namespace mlsl {

/// Where the true source landed in one test.
struct TestOutcome {
    ReplicaId true_source;
    std::size_t top_tie_size = 1;
    bool source_in_top = false;
    std::size_t source_rank = 1;
    // Physical-node view: distinct nodes among the top tie group, and
    // whether the source's node is one of them.
    std::size_t top_node_count = 1;
    bool node_in_top = false;
};

/// tp / (tp + fp) where the method's answer is the whole top tie group.
inline double precision_single(const TestOutcome& o) {
    if (o.top_tie_size < 1)
        throw std::invalid_argument("top tie group cannot be empty");
    return o.source_in_top ? 1.0 / static_cast<double>(o.top_tie_size) : 0.0;
}

inline double node_precision_single(const TestOutcome& o) {
    if (o.top_node_count < 1)
        throw std::invalid_argument("top tie group cannot be empty");
    return o.node_in_top ? 1.0 / static_cast<double>(o.top_node_count) : 0.0;
}

/// Pessimistic competition rank: candidates scoring strictly higher plus the
/// size of the source's own tie group.
inline std::size_t source_rank(const SourceRanking& ranking, std::size_t true_source) {
    const auto pos = ranking.position_of(true_source);
    if (!pos)
        throw std::logic_error("true source missing from ranking");
    return ranking.group_end(ranking.group_of(*pos));
}

inline TestOutcome make_outcome(const MultiplexGraph& g, const SourceRanking& ranking,
                                std::size_t true_source) {
    TestOutcome o;
    o.true_source = g.replica(true_source);
    o.top_tie_size = ranking.top_tie_size();
    o.source_rank = source_rank(ranking, true_source);
    o.source_in_top = o.source_rank <= o.top_tie_size;

    std::vector<node_t> nodes;
    nodes.reserve(o.top_tie_size);
    for (std::size_t k = 0; k < o.top_tie_size; ++k)
        nodes.push_back(ranking.entries()[k].candidate.node);
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    o.top_node_count = nodes.size();
    o.node_in_top = std::binary_search(nodes.begin(), nodes.end(), o.true_source.node);
    return o;
}

/// alpha-CSS: smallest k such that a fraction >= alpha of the tests ranked
/// the source within the top k.
inline std::size_t css(std::vector<std::size_t> ranks, double alpha) {
    if (ranks.empty())
        throw std::invalid_argument("css needs at least one rank");
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("css confidence must lie in (0, 1]");
    std::sort(ranks.begin(), ranks.end());
    const double n = static_cast<double>(ranks.size());
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        // Advance to the last test sharing this rank before checking coverage.
        if (i + 1 < ranks.size() && ranks[i + 1] == ranks[i])
            continue;
        if (static_cast<double>(i + 1) / n >= alpha - 1e-12)
            return ranks[i];
    }
    return ranks.back();
}

struct MetricsSummary {
    double avg_precision = 0.0;
    double node_precision = 0.0;
    std::map<double, std::size_t> css;
    std::size_t n_tests = 0;
    std::size_t discarded = 0;
};

inline MetricsSummary summarize(const std::vector<TestOutcome>& outcomes,
                                const std::vector<double>& alphas, std::size_t discarded = 0) {
    MetricsSummary s;
    s.n_tests = outcomes.size();
    s.discarded = discarded;
    if (outcomes.empty())
        return s;
    double total = 0.0;
    double node_total = 0.0;
    std::vector<std::size_t> ranks;
    ranks.reserve(outcomes.size());
    for (const auto& o : outcomes) {
        total += precision_single(o);
        node_total += node_precision_single(o);
        ranks.push_back(o.source_rank);
    }
    s.avg_precision = total / static_cast<double>(outcomes.size());
    s.node_precision = node_total / static_cast<double>(outcomes.size());
    for (double a : alphas)
        s.css[a] = css(ranks, a);
    return s;
}

/// Percentile bootstrap interval for the mean of `values`.
inline std::pair<double, double> bootstrap_mean_interval(const std::vector<double>& values,
                                                         double level, std::size_t resamples,
                                                         std::uint64_t seed) {
    if (values.empty())
        throw std::invalid_argument("bootstrap needs at least one value");
    rng_t rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    std::vector<double> means(resamples);
    for (auto& m : means) {
        double sum = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            sum += values[pick(rng)];
        m = sum / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    const double tail = (1.0 - level) / 2.0;
    auto at = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(resamples - 1)));
        return means[std::min(idx, resamples - 1)];
    };
    return {at(tail), at(1.0 - tail)};
}

} // namespace mlsl
