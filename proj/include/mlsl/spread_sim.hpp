#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mlsl/multiplex_graph.hpp"
#include "mlsl/rng.hpp"

namespace mlsl {

/// Per-step transmission probabilities: one per layer plus the interlink rate.
/// Every rate must lie in (0, 1].
class SpreadParams {
public:
    SpreadParams(std::vector<double> beta_intra, double beta_inter)
        : beta_intra_(std::move(beta_intra)), beta_inter_(beta_inter) {
        if (beta_intra_.empty())
            throw std::invalid_argument("need at least one intra-layer rate");
        for (std::size_t l = 0; l < beta_intra_.size(); ++l)
            check(beta_intra_[l], "beta_intra[" + std::to_string(l) + "]");
        check(beta_inter_, "beta_inter");
    }

    /// Same rate in every one of `layers` layers.
    static SpreadParams uniform(int layers, double beta_intra, double beta_inter) {
        return SpreadParams(std::vector<double>(static_cast<std::size_t>(layers), beta_intra),
                            beta_inter);
    }

    int layer_count() const noexcept { return static_cast<int>(beta_intra_.size()); }
    const std::vector<double>& beta_intra() const noexcept { return beta_intra_; }
    double beta_inter() const noexcept { return beta_inter_; }

    /// Rate for a link class (0..L-1 intra, L inter).
    double rate(int link_class) const {
        return link_class == layer_count() ? beta_inter_ : beta_intra_.at(link_class);
    }

private:
    static void check(double b, const std::string& name) {
        if (!(b > 0.0 && b <= 1.0))
            throw std::invalid_argument(name + " must lie in (0, 1], got " + std::to_string(b));
    }

    std::vector<double> beta_intra_;
    double beta_inter_;
};

/// Per-link-class delay mean and variance, indexed like link classes:
/// [0, L) intra layers, L interlinks.
struct DelayMoments {
    std::vector<double> mu;
    std::vector<double> sigma2;

    int layer_count() const noexcept { return static_cast<int>(mu.size()) - 1; }
    double max_mu() const { return *std::max_element(mu.begin(), mu.end()); }

    /// Multiply all means by c and all variances by c^2.
    DelayMoments scaled(double c) const {
        DelayMoments out = *this;
        for (auto& m : out.mu)
            m *= c;
        for (auto& s : out.sigma2)
            s *= c * c;
        return out;
    }
};

/// Geometric traversal time on {1, 2, ...}: mean 1/beta, variance (1-beta)/beta^2.
inline DelayMoments delay_moments(const SpreadParams& params) {
    DelayMoments out;
    const int L = params.layer_count();
    out.mu.reserve(static_cast<std::size_t>(L) + 1);
    out.sigma2.reserve(static_cast<std::size_t>(L) + 1);
    for (int c = 0; c <= L; ++c) {
        const double b = params.rate(c);
        out.mu.push_back(1.0 / b);
        out.sigma2.push_back((1.0 - b) / (b * b));
    }
    return out;
}

/// Infection times of one SI realization, indexed by flat replica index.
struct InfectionRecord {
    static constexpr int uninfected = -1;

    ReplicaId source;
    node_t nodes_per_layer = 0;
    std::vector<int> time;
    int horizon = 0;

    std::size_t flat_index(ReplicaId r) const {
        return static_cast<std::size_t>(r.layer) * static_cast<std::size_t>(nodes_per_layer) +
               static_cast<std::size_t>(r.node);
    }

    std::optional<int> time_of(std::size_t flat) const {
        const int t = time.at(flat);
        if (t == uninfected)
            return std::nullopt;
        return t;
    }
    std::optional<int> time_of(ReplicaId r) const { return time_of(flat_index(r)); }

    std::size_t infected_count() const {
        return static_cast<std::size_t>(
            std::count_if(time.begin(), time.end(), [](int t) { return t != uninfected; }));
    }
};

/// Step cap used when none is given: 20 * mu_max * ceil(2 log2 n_tot), at least 1000.
inline int default_horizon(const MultiplexGraph& g, const DelayMoments& moments) {
    const double n = static_cast<double>(std::max<std::size_t>(g.replica_count(), 1));
    const double diameter_bound = std::ceil(2.0 * std::log2(n));
    const double h = 20.0 * moments.max_mu() * diameter_bound;
    return std::max(1000, static_cast<int>(std::min(h, 1e9)));
}

/// Synchronous SI dynamics. At step t every replica infected before t tries
/// each susceptible neighbor with an independent Bernoulli trial at the rate
/// of the connecting link class; successes are infected at t and transmit
/// from t+1. Replicas of the same node never share state; a replica image is
/// reached only through its interlink trial. Stops once nothing susceptible
/// is reachable or t_max steps have run.
inline InfectionRecord simulate(const MultiplexGraph& g, ReplicaId source,
                                const SpreadParams& params, rng_t& rng, int t_max) {
    if (params.layer_count() != g.layer_count())
        throw std::invalid_argument("spread parameters have " +
                                    std::to_string(params.layer_count()) +
                                    " intra rates for a graph with " +
                                    std::to_string(g.layer_count()) + " layers");
    if (t_max < 1)
        throw std::invalid_argument("t_max must be >= 1");

    InfectionRecord rec;
    rec.source = source;
    rec.nodes_per_layer = g.nodes_per_layer();
    rec.horizon = t_max;
    rec.time.assign(g.replica_count(), InfectionRecord::uninfected);

    const std::size_t src = g.flat_index(source);
    rec.time[src] = 0;
    std::size_t susceptible = g.replica_count() - 1;

    std::vector<double> rate(static_cast<std::size_t>(g.layer_count()) + 1);
    for (int c = 0; c <= g.layer_count(); ++c)
        rate[static_cast<std::size_t>(c)] = params.rate(c);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::size_t> active{src};
    std::vector<std::size_t> next;

    for (int t = 1; t <= t_max && susceptible > 0 && !active.empty(); ++t) {
        next.clear();
        for (std::size_t u : active) {
            bool has_susceptible = false;
            g.for_each_neighbor(u, [&](Neighbor nb) {
                if (rec.time[nb.flat] != InfectionRecord::uninfected)
                    return;
                if (unit(rng) < rate[static_cast<std::size_t>(nb.link_class)]) {
                    rec.time[nb.flat] = t;
                    next.push_back(nb.flat);
                    --susceptible;
                } else {
                    has_susceptible = true;
                }
            });
            if (has_susceptible)
                next.push_back(u);
        }
        std::sort(next.begin(), next.end());
        active.swap(next);
    }
    return rec;
}

inline InfectionRecord simulate(const MultiplexGraph& g, ReplicaId source,
                                const SpreadParams& params, rng_t& rng) {
    return simulate(g, source, params, rng, default_horizon(g, delay_moments(params)));
}

/// `layer node time` per infected replica, ascending flat index.
inline void write_record(std::ostream& os, const InfectionRecord& rec) {
    const auto n = static_cast<std::size_t>(rec.nodes_per_layer);
    for (std::size_t f = 0; f < rec.time.size(); ++f)
        if (rec.time[f] != InfectionRecord::uninfected)
            os << f / n << ' ' << f % n << ' ' << rec.time[f] << '\n';
}

} // namespace mlsl
