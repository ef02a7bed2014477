#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlsl/locator.hpp"
#include "mlsl/metrics.hpp"
#include "mlsl/multiplex_graph.hpp"
#include "mlsl/observation.hpp"
#include "mlsl/parallel.hpp"
#include "mlsl/rng.hpp"
#include "mlsl/spread_sim.hpp"

namespace mlsl {

/// Malformed experiment configuration; `field` names the offending key.
class config_error : public std::runtime_error {
public:
    config_error(std::string field, const std::string& what)
        : std::runtime_error("config field '" + field + "': " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

enum class ExperimentTemplate { rate_grid, density_grid, layers_fixed_nl, layers_fixed_ntot };

inline std::string to_string(ExperimentTemplate t) {
    switch (t) {
    case ExperimentTemplate::rate_grid: return "rate_grid";
    case ExperimentTemplate::density_grid: return "density_grid";
    case ExperimentTemplate::layers_fixed_nl: return "layers_fixed_nl";
    case ExperimentTemplate::layers_fixed_ntot: return "layers_fixed_ntot";
    }
    return "?";
}

/// Everything needed to run one sweep. Axis lists are swept as a full grid;
/// which axes apply depends on the template.
struct ExperimentConfig {
    ExperimentTemplate kind = ExperimentTemplate::rate_grid;
    GraphModel model = GraphModel::ER;
    double mean_degree = 8.0;
    node_t nodes_per_layer = 1000;
    node_t total_nodes = 600;

    // rate_grid
    std::vector<double> beta1{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> beta2{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> rho{0.1, 0.1};
    // density_grid
    std::vector<double> rho1{0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2};
    std::vector<double> rho2{0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2};
    double beta1_fixed = 0.5;
    double beta2_fixed = 0.5;
    // layers_*
    std::vector<int> layers{1, 2, 3, 4};
    double beta_intra = 0.5;
    double rho_all = 0.1;

    std::vector<double> beta_inter{0.1, 0.5, 0.9};

    std::size_t realizations = 1000;
    std::uint64_t master_seed = 0;
    std::vector<double> alphas{0.95};
    int source_layer = 0;
    bool fixed_graph = false;
    bool node_level = false;
    std::optional<int> t_max;

    static ExperimentConfig defaults(ExperimentTemplate t, GraphModel m = GraphModel::ER) {
        ExperimentConfig c;
        c.kind = t;
        c.model = m;
        switch (t) {
        case ExperimentTemplate::rate_grid:
            c.nodes_per_layer = m == GraphModel::ER ? 1000 : 500;
            break;
        case ExperimentTemplate::density_grid:
            c.nodes_per_layer = 500;
            break;
        case ExperimentTemplate::layers_fixed_nl:
        case ExperimentTemplate::layers_fixed_ntot:
            c.nodes_per_layer = 200;
            c.total_nodes = 600;
            c.beta_inter = {0.8};
            break;
        }
        return c;
    }
};

/// One fully specified grid point.
struct GridPoint {
    std::size_t index = 0;
    std::vector<std::uint64_t> coords;
    std::vector<double> columns; // axis values written to the CSV
    GraphGenSpec graph;
    std::vector<double> beta_intra;
    double beta_inter = 0.5;
    std::vector<double> rho;
    int source_layer = 0;
};

inline std::vector<std::string> axis_columns(ExperimentTemplate t) {
    switch (t) {
    case ExperimentTemplate::rate_grid: return {"beta1", "beta2", "beta_inter"};
    case ExperimentTemplate::density_grid: return {"rho1", "rho2", "beta_inter"};
    case ExperimentTemplate::layers_fixed_nl:
    case ExperimentTemplate::layers_fixed_ntot: return {"layers", "n_l", "beta_inter"};
    }
    return {};
}

/// Column label for an alpha-CSS value: 0.95 -> css95, 0.995 -> css99.5.
inline std::string css_column(double alpha) {
    std::ostringstream os;
    os << "css" << std::setprecision(6) << alpha * 100.0;
    return os.str();
}

namespace detail {

inline void require_rate(double b, const std::string& field) {
    if (!(b > 0.0 && b <= 1.0))
        throw config_error(field, "rate must lie in (0, 1]");
}
inline void require_density(double r, const std::string& field) {
    if (!(r > 0.0 && r <= 1.0))
        throw config_error(field, "density must lie in (0, 1]");
}
template <class T>
void require_nonempty(const std::vector<T>& v, const std::string& field) {
    if (v.empty())
        throw config_error(field, "axis must not be empty");
}

} // namespace detail

inline void validate(const ExperimentConfig& c) {
    if (c.realizations < 1)
        throw config_error("realizations", "must be >= 1");
    if (!(c.mean_degree > 0.0))
        throw config_error("mean_degree", "must be positive");
    detail::require_nonempty(c.alphas, "alphas");
    for (double a : c.alphas)
        if (!(a > 0.0 && a <= 1.0))
            throw config_error("alphas", "confidence must lie in (0, 1]");
    detail::require_nonempty(c.beta_inter, "beta_inter");
    for (double b : c.beta_inter)
        detail::require_rate(b, "beta_inter");
    if (c.source_layer < 0)
        throw config_error("source_layer", "must be non-negative");
    if (c.t_max && *c.t_max < 1)
        throw config_error("t_max", "must be >= 1");

    switch (c.kind) {
    case ExperimentTemplate::rate_grid:
        detail::require_nonempty(c.beta1, "beta1");
        detail::require_nonempty(c.beta2, "beta2");
        for (double b : c.beta1)
            detail::require_rate(b, "beta1");
        for (double b : c.beta2)
            detail::require_rate(b, "beta2");
        if (c.rho.size() != 2)
            throw config_error("rho", "rate_grid needs two per-layer densities");
        for (double r : c.rho)
            detail::require_density(r, "rho");
        if (c.source_layer > 1)
            throw config_error("source_layer", "must be 0 or 1 for a two-layer template");
        break;
    case ExperimentTemplate::density_grid:
        detail::require_nonempty(c.rho1, "rho1");
        detail::require_nonempty(c.rho2, "rho2");
        for (double r : c.rho1)
            detail::require_density(r, "rho1");
        for (double r : c.rho2)
            detail::require_density(r, "rho2");
        detail::require_rate(c.beta1_fixed, "beta1");
        detail::require_rate(c.beta2_fixed, "beta2");
        if (c.source_layer > 1)
            throw config_error("source_layer", "must be 0 or 1 for a two-layer template");
        break;
    case ExperimentTemplate::layers_fixed_nl:
    case ExperimentTemplate::layers_fixed_ntot:
        detail::require_nonempty(c.layers, "layers");
        for (int L : c.layers) {
            if (L < 1)
                throw config_error("layers", "layer counts must be >= 1");
            if (c.source_layer >= L)
                throw config_error("source_layer", "exceeds the smallest layer count");
            if (c.kind == ExperimentTemplate::layers_fixed_ntot && c.total_nodes % L != 0)
                throw config_error("total_nodes", "must be divisible by every layer count (" +
                                                      std::to_string(L) + ")");
        }
        detail::require_rate(c.beta_intra, "beta_intra");
        detail::require_density(c.rho_all, "rho");
        break;
    }
    if (c.kind != ExperimentTemplate::layers_fixed_ntot && c.nodes_per_layer < 2)
        throw config_error("nodes_per_layer", "must be >= 2");
}

/// Expand the template into its grid, in row-major order of the axes.
inline std::vector<GridPoint> expand_grid(const ExperimentConfig& c) {
    validate(c);
    std::vector<GridPoint> points;
    auto base = [&](int L, node_t n_l) {
        GridPoint p;
        p.graph.model = c.model;
        p.graph.layer_count = L;
        p.graph.nodes_per_layer = n_l;
        p.graph.mean_degree = c.mean_degree;
        p.source_layer = c.source_layer;
        return p;
    };
    auto check_graph = [&](const GridPoint& p) {
        try {
            p.graph.validate();
        } catch (const std::invalid_argument& e) {
            throw config_error("mean_degree", e.what());
        }
        for (double r : p.rho)
            if (observer_count(r, p.graph.nodes_per_layer) > static_cast<std::size_t>(p.graph.nodes_per_layer))
                throw config_error("rho", "more observers than nodes");
    };

    switch (c.kind) {
    case ExperimentTemplate::rate_grid:
        for (std::size_t i = 0; i < c.beta1.size(); ++i)
            for (std::size_t j = 0; j < c.beta2.size(); ++j)
                for (std::size_t k = 0; k < c.beta_inter.size(); ++k) {
                    GridPoint p = base(2, c.nodes_per_layer);
                    p.coords = {i, j, k};
                    p.columns = {c.beta1[i], c.beta2[j], c.beta_inter[k]};
                    p.beta_intra = {c.beta1[i], c.beta2[j]};
                    p.beta_inter = c.beta_inter[k];
                    p.rho = c.rho;
                    points.push_back(std::move(p));
                }
        break;
    case ExperimentTemplate::density_grid:
        for (std::size_t i = 0; i < c.rho1.size(); ++i)
            for (std::size_t j = 0; j < c.rho2.size(); ++j)
                for (std::size_t k = 0; k < c.beta_inter.size(); ++k) {
                    GridPoint p = base(2, c.nodes_per_layer);
                    p.coords = {i, j, k};
                    p.columns = {c.rho1[i], c.rho2[j], c.beta_inter[k]};
                    p.beta_intra = {c.beta1_fixed, c.beta2_fixed};
                    p.beta_inter = c.beta_inter[k];
                    p.rho = {c.rho1[i], c.rho2[j]};
                    points.push_back(std::move(p));
                }
        break;
    case ExperimentTemplate::layers_fixed_nl:
    case ExperimentTemplate::layers_fixed_ntot:
        for (std::size_t i = 0; i < c.layers.size(); ++i)
            for (std::size_t k = 0; k < c.beta_inter.size(); ++k) {
                const int L = c.layers[i];
                const node_t n_l = c.kind == ExperimentTemplate::layers_fixed_nl
                                       ? c.nodes_per_layer
                                       : static_cast<node_t>(c.total_nodes / L);
                GridPoint p = base(L, n_l);
                p.coords = {i, k};
                p.columns = {static_cast<double>(L), static_cast<double>(n_l), c.beta_inter[k]};
                p.beta_intra.assign(static_cast<std::size_t>(L), c.beta_intra);
                p.beta_inter = c.beta_inter[k];
                p.rho.assign(static_cast<std::size_t>(L), c.rho_all);
                points.push_back(std::move(p));
            }
        break;
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        points[i].index = i;
        check_graph(points[i]);
    }
    return points;
}

/// Result of one realization; `outcome` is empty when it was discarded.
struct RealizationResult {
    std::optional<TestOutcome> outcome;
};

namespace detail {

inline std::uint64_t coords_key(const std::vector<std::uint64_t>& coords) {
    std::uint64_t h = 0x51ed270b27f1a4cdULL;
    for (auto c : coords)
        h = mix64(h ^ mix64(c));
    return h;
}

} // namespace detail

/// Spread from `source`, read the observers, rank every replica and score
/// the result. Returns an empty result when fewer than two observers were
/// reached.
inline RealizationResult evaluate_realization(const MultiplexGraph& g, ReplicaId source,
                                              const ObserverSet& observers,
                                              const SpreadParams& params, rng_t& spread_rng,
                                              std::optional<int> t_max = std::nullopt) {
    const DelayMoments moments = delay_moments(params);
    const int horizon = t_max ? *t_max : default_horizon(g, moments);
    const InfectionRecord rec = simulate(g, source, params, spread_rng, horizon);

    DelayVector dv;
    try {
        dv = build_delay_vector(rec, observers);
    } catch (const unusable_realization&) {
        return {};
    }
    const SourceRanking ranking = rank_sources(g, dv, moments, 1);
    return {make_outcome(g, ranking, g.flat_index(source))};
}

/// Fresh graph, observers and source (uniform over the source layer), one
/// SI run, delay vector, ranking. Each step draws from its own substream
/// keyed by (master seed, grid coordinates, realization, purpose), so the
/// result is independent of execution order.
inline RealizationResult run_realization(const ExperimentConfig& cfg, const GridPoint& point,
                                         std::size_t realization) {
    const std::uint64_t key = detail::coords_key(point.coords);
    const std::uint64_t graph_index = cfg.fixed_graph ? 0 : realization;

    rng_t graph_rng = make_rng(cfg.master_seed, {key, graph_index, tag(stream::graph)});
    const MultiplexGraph g = generate_multiplex(point.graph, graph_rng);

    rng_t obs_rng = make_rng(cfg.master_seed, {key, realization, tag(stream::observers)});
    const ObserverSet observers = place_observers(g, point.rho, obs_rng);

    rng_t src_rng = make_rng(cfg.master_seed, {key, realization, tag(stream::source)});
    std::uniform_int_distribution<node_t> pick(0, g.nodes_per_layer() - 1);
    const ReplicaId source{pick(src_rng), point.source_layer};

    const SpreadParams params(point.beta_intra, point.beta_inter);
    rng_t spread_rng = make_rng(cfg.master_seed, {key, realization, tag(stream::spread)});
    return evaluate_realization(g, source, observers, params, spread_rng, cfg.t_max);
}

struct ResultRow {
    GridPoint point;
    MetricsSummary metrics;
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    /// Per point, per realization (empty optional = discarded).
    std::vector<std::vector<std::optional<TestOutcome>>> outcomes;
};

/// Run every (grid point x realization) pair on `threads` workers.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned threads = 0) {
    const std::vector<GridPoint> points = expand_grid(cfg);
    const std::size_t R = cfg.realizations;

    ExperimentResult result;
    result.outcomes.assign(points.size(), std::vector<std::optional<TestOutcome>>(R));
    parallel_for(points.size() * R, threads, [&](std::size_t job) {
        const std::size_t p = job / R;
        const std::size_t r = job % R;
        result.outcomes[p][r] = run_realization(cfg, points[p], r).outcome;
    });

    result.rows.reserve(points.size());
    for (std::size_t p = 0; p < points.size(); ++p) {
        std::vector<TestOutcome> kept;
        kept.reserve(R);
        for (const auto& o : result.outcomes[p])
            if (o)
                kept.push_back(*o);
        const std::size_t discarded = R - kept.size();
        result.rows.push_back({points[p], summarize(kept, cfg.alphas, discarded)});
    }
    return result;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

inline void write_results_csv(std::ostream& os, const ExperimentConfig& cfg,
                              const std::vector<ResultRow>& rows) {
    std::vector<std::string> header = axis_columns(cfg.kind);
    header.push_back("avg_precision");
    for (double a : cfg.alphas)
        header.push_back(css_column(a));
    header.push_back("n_tests");
    header.push_back("discarded");
    if (cfg.node_level)
        header.push_back("node_precision");

    for (std::size_t i = 0; i < header.size(); ++i)
        os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.point.columns.size(); ++i)
            os << (i ? "," : "") << format_number(row.point.columns[i]);
        os << ',' << format_number(row.metrics.avg_precision);
        for (double a : cfg.alphas) {
            const auto it = row.metrics.css.find(a);
            os << ',';
            if (it != row.metrics.css.end())
                os << it->second;
            else
                os << "NA";
        }
        os << ',' << row.metrics.n_tests << ',' << row.metrics.discarded;
        if (cfg.node_level)
            os << ',' << format_number(row.metrics.node_precision);
        os << '\n';
    }
}

/// Per-realization outcomes, consumable by the `metrics` subcommand.
inline void write_outcomes_csv(std::ostream& os, const ExperimentResult& result) {
    os << "point,realization,discarded,top_tie_size,source_in_top,source_rank,top_node_count,"
          "node_in_top\n";
    for (std::size_t p = 0; p < result.outcomes.size(); ++p)
        for (std::size_t r = 0; r < result.outcomes[p].size(); ++r) {
            const auto& o = result.outcomes[p][r];
            os << p << ',' << r << ',';
            if (!o) {
                os << "1,0,0,0,0,0\n";
                continue;
            }
            os << "0," << o->top_tie_size << ',' << (o->source_in_top ? 1 : 0) << ','
               << o->source_rank << ',' << o->top_node_count << ',' << (o->node_in_top ? 1 : 0)
               << '\n';
        }
}

struct OutcomeTable {
    /// point index -> outcomes (discarded ones counted separately)
    std::map<std::size_t, std::vector<TestOutcome>> kept;
    std::map<std::size_t, std::size_t> discarded;
};

inline OutcomeTable read_outcomes_csv(std::istream& is) {
    OutcomeTable table;
    std::string line;
    if (!std::getline(is, line))
        throw std::runtime_error("outcomes file is empty");
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r")
            continue;
        std::vector<long long> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ','))
            try {
                f.push_back(std::stoll(cell));
            } catch (const std::exception&) {
                throw std::runtime_error("outcomes file line " + std::to_string(lineno) +
                                         ": non-integer field '" + cell + "'");
            }
        if (f.size() != 8)
            throw std::runtime_error("outcomes file line " + std::to_string(lineno) +
                                     ": expected 8 fields");
        const auto p = static_cast<std::size_t>(f[0]);
        table.kept[p];
        if (f[2] != 0) {
            ++table.discarded[p];
            continue;
        }
        TestOutcome o;
        o.top_tie_size = static_cast<std::size_t>(f[3]);
        o.source_in_top = f[4] != 0;
        o.source_rank = static_cast<std::size_t>(f[5]);
        o.top_node_count = static_cast<std::size_t>(f[6]);
        o.node_in_top = f[7] != 0;
        if (o.top_tie_size < 1 || o.source_rank < 1 || o.top_node_count < 1)
            throw std::runtime_error("outcomes file line " + std::to_string(lineno) +
                                     ": sizes and ranks must be >= 1");
        table.kept[p].push_back(o);
    }
    return table;
}

// ---------------------------------------------------------------------------
// JSON config
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
T get_field(const nlohmann::json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(key, std::string("wrong type: ") + e.what());
    }
}

/// Accept either a scalar or a list for an axis.
template <class T>
std::vector<T> get_axis(const nlohmann::json& j, const std::string& key) {
    const auto& v = j.at(key);
    if (v.is_array())
        return get_field<std::vector<T>>(j, key);
    return {get_field<T>(j, key)};
}

inline double get_scalar(const nlohmann::json& j, const std::string& key) {
    const auto& v = j.at(key);
    if (v.is_array()) {
        if (v.size() != 1)
            throw config_error(key, "expected a single value");
        return get_field<std::vector<double>>(j, key).front();
    }
    return get_field<double>(j, key);
}

} // namespace detail

inline ExperimentTemplate parse_template(const std::string& s) {
    if (s == "rate_grid")
        return ExperimentTemplate::rate_grid;
    if (s == "density_grid")
        return ExperimentTemplate::density_grid;
    if (s == "layers_fixed_nl")
        return ExperimentTemplate::layers_fixed_nl;
    if (s == "layers_fixed_ntot")
        return ExperimentTemplate::layers_fixed_ntot;
    throw config_error("template", "unknown template '" + s + "'");
}

/// Build a config from JSON. Missing keys take the template's defaults;
/// unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::get_axis;
    using detail::get_field;
    using detail::get_scalar;
    if (!j.is_object())
        throw config_error("<root>", "config must be a JSON object");
    if (!j.contains("template"))
        throw config_error("template", "missing");
    const ExperimentTemplate kind = parse_template(get_field<std::string>(j, "template"));

    GraphModel model = GraphModel::ER;
    if (j.contains("model")) {
        try {
            model = parse_model(get_field<std::string>(j, "model"));
        } catch (const std::invalid_argument& e) {
            throw config_error("model", e.what());
        }
    }
    ExperimentConfig c = ExperimentConfig::defaults(kind, model);

    const bool two_layer =
        kind == ExperimentTemplate::rate_grid || kind == ExperimentTemplate::density_grid;
    for (const auto& [key, value] : j.items()) {
        if (key == "template" || key == "model")
            continue;
        if (key == "mean_degree")
            c.mean_degree = get_field<double>(j, key);
        else if (key == "nodes_per_layer" && kind != ExperimentTemplate::layers_fixed_ntot) {
            const auto n = get_field<long long>(j, key);
            if (n < 2 || n > std::numeric_limits<node_t>::max())
                throw config_error(key, "out of range");
            c.nodes_per_layer = static_cast<node_t>(n);
        } else if (key == "total_nodes" && kind == ExperimentTemplate::layers_fixed_ntot) {
            const auto n = get_field<long long>(j, key);
            if (n < 2 || n > std::numeric_limits<node_t>::max())
                throw config_error(key, "out of range");
            c.total_nodes = static_cast<node_t>(n);
        } else if (key == "beta_inter")
            c.beta_inter = get_axis<double>(j, key);
        else if (key == "realizations") {
            const auto r = get_field<long long>(j, key);
            if (r < 1)
                throw config_error(key, "must be >= 1");
            c.realizations = static_cast<std::size_t>(r);
        } else if (key == "master_seed")
            c.master_seed = get_field<std::uint64_t>(j, key);
        else if (key == "alphas")
            c.alphas = get_axis<double>(j, key);
        else if (key == "source_layer")
            c.source_layer = get_field<int>(j, key);
        else if (key == "fixed_graph")
            c.fixed_graph = get_field<bool>(j, key);
        else if (key == "node_level")
            c.node_level = get_field<bool>(j, key);
        else if (key == "t_max")
            c.t_max = get_field<int>(j, key);
        else if (kind == ExperimentTemplate::rate_grid && key == "beta1")
            c.beta1 = get_axis<double>(j, key);
        else if (kind == ExperimentTemplate::rate_grid && key == "beta2")
            c.beta2 = get_axis<double>(j, key);
        else if (kind == ExperimentTemplate::rate_grid && key == "rho")
            c.rho = get_axis<double>(j, key);
        else if (kind == ExperimentTemplate::density_grid && key == "rho1")
            c.rho1 = get_axis<double>(j, key);
        else if (kind == ExperimentTemplate::density_grid && key == "rho2")
            c.rho2 = get_axis<double>(j, key);
        else if (kind == ExperimentTemplate::density_grid && key == "beta1")
            c.beta1_fixed = get_scalar(j, key);
        else if (kind == ExperimentTemplate::density_grid && key == "beta2")
            c.beta2_fixed = get_scalar(j, key);
        else if (!two_layer && key == "layers")
            c.layers = get_axis<int>(j, key);
        else if (!two_layer && key == "beta_intra")
            c.beta_intra = get_scalar(j, key);
        else if (!two_layer && key == "rho")
            c.rho_all = get_scalar(j, key);
        else
            throw config_error(key, "not a recognized field for template '" + to_string(kind) + "'");
    }
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw config_error("--config", "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw config_error("<root>", std::string("invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

} // namespace mlsl
