#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlsl/multiplex_graph.hpp"
#include "mlsl/rng.hpp"
#include "mlsl/spread_sim.hpp"

namespace mlsl {

/// Thrown when a realization cannot produce a delay vector (fewer than two
/// observers infected). The harness counts these as discarded.
class unusable_realization : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Observers sorted by flat index, with the per-layer densities they were
/// drawn from.
struct ObserverSet {
    std::vector<ReplicaId> observers;
    std::vector<double> densities;

    std::size_t budget() const noexcept { return observers.size(); }
};

/// Observer count for one layer: round-half-up of rho * n_l.
inline std::size_t observer_count(double rho, node_t n_l) {
    return static_cast<std::size_t>(std::floor(rho * static_cast<double>(n_l) + 0.5));
}

inline ObserverSet place_observers(const MultiplexGraph& g, const std::vector<double>& densities,
                                   rng_t& rng) {
    if (static_cast<int>(densities.size()) != g.layer_count())
        throw std::invalid_argument("need one observer density per layer");
    std::size_t total = 0;
    for (std::size_t l = 0; l < densities.size(); ++l) {
        if (!(densities[l] > 0.0 && densities[l] <= 1.0))
            throw std::invalid_argument("observer density rho[" + std::to_string(l) +
                                        "] must lie in (0, 1]");
        total += observer_count(densities[l], g.nodes_per_layer());
    }
    if (total < 2)
        throw std::invalid_argument("observer budget < 2");

    ObserverSet out;
    out.densities = densities;
    out.observers.reserve(total);
    std::vector<node_t> nodes(static_cast<std::size_t>(g.nodes_per_layer()));
    std::iota(nodes.begin(), nodes.end(), node_t{0});
    std::vector<node_t> picked;
    for (int l = 0; l < g.layer_count(); ++l) {
        const std::size_t k = observer_count(densities[static_cast<std::size_t>(l)],
                                             g.nodes_per_layer());
        picked.clear();
        std::sample(nodes.begin(), nodes.end(), std::back_inserter(picked), k, rng);
        for (node_t u : picked)
            out.observers.push_back({u, l});
    }
    // ReplicaId orders by (node, layer); sort by flat index instead.
    std::sort(out.observers.begin(), out.observers.end(), [](ReplicaId a, ReplicaId b) {
        return a.layer != b.layer ? a.layer < b.layer : a.node < b.node;
    });
    return out;
}

/// Relative delays of the infected observers. reporting[0] is the reference
/// observer and d[i] belongs to reporting[i + 1].
struct DelayVector {
    ReplicaId reference;
    std::vector<int> d;
    std::vector<ReplicaId> reporting;

    std::size_t budget() const noexcept { return reporting.size(); }
};

/// Uninfected observers are dropped. The reference is the earliest-infected
/// observer (ties to the lowest flat index); the rest keep ascending flat
/// order, so every delay is non-negative.
inline DelayVector build_delay_vector(const InfectionRecord& rec, const ObserverSet& obs) {
    struct Reported {
        std::size_t flat;
        ReplicaId replica;
        int time;
    };
    std::vector<Reported> infected;
    infected.reserve(obs.observers.size());
    for (ReplicaId o : obs.observers) {
        const std::size_t f = rec.flat_index(o);
        if (f >= rec.time.size())
            throw std::out_of_range("observer outside the infection record");
        if (rec.time[f] != InfectionRecord::uninfected)
            infected.push_back({f, o, rec.time[f]});
    }
    if (infected.size() < 2)
        throw unusable_realization("fewer than 2 observers infected (" +
                                   std::to_string(infected.size()) + ")");

    std::sort(infected.begin(), infected.end(),
              [](const Reported& a, const Reported& b) { return a.flat < b.flat; });
    const auto ref = std::min_element(
        infected.begin(), infected.end(), [](const Reported& a, const Reported& b) {
            return a.time != b.time ? a.time < b.time : a.flat < b.flat;
        });

    DelayVector dv;
    dv.reference = ref->replica;
    dv.reporting.reserve(infected.size());
    dv.d.reserve(infected.size() - 1);
    dv.reporting.push_back(ref->replica);
    for (auto it = infected.begin(); it != infected.end(); ++it) {
        if (it == ref)
            continue;
        dv.reporting.push_back(it->replica);
        dv.d.push_back(it->time - ref->time);
    }
    return dv;
}

} // namespace mlsl
