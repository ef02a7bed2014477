#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mlsl/harness.hpp"
#include "mlsl/locator.hpp"
#include "mlsl/metrics.hpp"
#include "mlsl/multiplex_graph.hpp"
#include "mlsl/observation.hpp"
#include "mlsl/spread_sim.hpp"

namespace mlsl {

namespace cli {

/// Observer report file: `layer node time` per observer. A time of `-` or
/// `NA` marks an observer that was never infected.
struct ObservationFile {
    ObserverSet observers;
    InfectionRecord record;
};

inline ObservationFile read_observations(std::istream& is, const MultiplexGraph& g) {
    ObservationFile out;
    out.record.nodes_per_layer = g.nodes_per_layer();
    out.record.time.assign(g.replica_count(), InfectionRecord::uninfected);
    out.observers.densities.assign(static_cast<std::size_t>(g.layer_count()), 0.0);

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#')
            continue;
        std::istringstream ls(line);
        int layer = 0;
        long long node = 0;
        std::string time;
        if (!(ls >> layer >> node >> time))
            throw std::runtime_error("observation file line " + std::to_string(lineno) +
                                     ": expected 'layer node time'");
        const ReplicaId r{static_cast<node_t>(node), layer};
        if (!g.valid(r))
            throw std::runtime_error("observation file line " + std::to_string(lineno) +
                                     ": replica outside the graph");
        const std::size_t f = g.flat_index(r);
        if (std::find(out.observers.observers.begin(), out.observers.observers.end(), r) !=
            out.observers.observers.end())
            throw std::runtime_error("observation file line " + std::to_string(lineno) +
                                     ": duplicate observer");
        out.observers.observers.push_back(r);
        if (time == "-" || time == "NA")
            continue;
        int t = 0;
        try {
            std::size_t used = 0;
            t = std::stoi(time, &used);
            if (used != time.size() || t < 0)
                throw std::invalid_argument(time);
        } catch (const std::exception&) {
            throw std::runtime_error("observation file line " + std::to_string(lineno) +
                                     ": invalid time '" + time + "'");
        }
        out.record.time[f] = t;
    }
    std::sort(out.observers.observers.begin(), out.observers.observers.end(),
              [&](ReplicaId a, ReplicaId b) { return g.flat_index(a) < g.flat_index(b); });
    return out;
}

inline void write_ranking_csv(std::ostream& os, const SourceRanking& ranking) {
    os << "rank,layer,node,score\n";
    os << std::setprecision(17);
    for (std::size_t k = 0; k < ranking.size(); ++k) {
        const auto& e = ranking.entries()[k];
        const std::size_t rank = ranking.group_end(ranking.group_of(k));
        os << rank << ',' << e.candidate.layer << ',' << e.candidate.node << ',';
        if (e.valid)
            os << e.score;
        else
            os << "-inf";
        os << '\n';
    }
}

/// Writes to --out when given, otherwise to the fallback stream.
class Output {
public:
    Output(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
        if (!path.empty()) {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_)
                throw std::runtime_error("cannot open output file '" + path + "'");
            stream_ = file_.get();
        }
    }
    std::ostream& stream() { return *stream_; }
    void finish() {
        stream_->flush();
        if (!*stream_)
            throw std::runtime_error("write failed");
    }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* stream_;
};

inline MultiplexGraph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open graph file '" + path + "'");
    return read_graph(in).graph;
}

inline SpreadParams params_for(const MultiplexGraph& g, std::vector<double> beta,
                               double beta_inter) {
    if (beta.size() == 1 && g.layer_count() > 1)
        beta.assign(static_cast<std::size_t>(g.layer_count()), beta.front());
    if (static_cast<int>(beta.size()) != g.layer_count())
        throw std::invalid_argument("--beta needs one rate per layer (or a single shared rate)");
    return SpreadParams(std::move(beta), beta_inter);
}

/// Thrown for command-line usage problems; mapped to exit code 2.
class usage_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace cli

/// Entry point for the `mlsl` tool. Returns the process exit code:
/// 0 success, 2 malformed arguments or config, 1 any other failure.
inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
    CLI::App app{"Multilayer spreading-source location"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Generate a multiplex graph");
    std::string gen_model = "ER";
    int gen_layers = 2;
    long long gen_nodes = 1000;
    double gen_degree = 8.0;
    std::uint64_t seed = 0;
    std::string out_path;
    gen->add_option("--model", gen_model, "ER or BA")->capture_default_str();
    gen->add_option("--layers", gen_layers, "Number of layers")->capture_default_str();
    gen->add_option("--nodes", gen_nodes, "Nodes per layer")->capture_default_str();
    gen->add_option("--mean-degree", gen_degree, "Mean intra-layer degree")->capture_default_str();
    gen->add_option("--seed", seed, "Random seed")->capture_default_str();
    gen->add_option("--out", out_path, "Output file (default stdout)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Run one SI realization and dump infection times");
    std::string graph_path;
    int source_layer = 0;
    long long source_node = 0;
    std::vector<double> beta;
    double beta_inter = 0.5;
    int t_max = 0;
    sim->add_option("--graph", graph_path, "Graph file")->required();
    sim->add_option("--source-layer", source_layer)->capture_default_str();
    sim->add_option("--source-node", source_node)->capture_default_str();
    sim->add_option("--beta", beta, "Intra-layer rates, one per layer or one shared")
        ->required()
        ->delimiter(',');
    sim->add_option("--beta-inter", beta_inter)->required();
    sim->add_option("--seed", seed)->capture_default_str();
    sim->add_option("--t-max", t_max, "Step cap (default derived from the graph)");
    sim->add_option("--out", out_path);

    // locate
    auto* loc = app.add_subcommand("locate", "Rank candidate sources from observer reports");
    std::string obs_path;
    unsigned threads = 0;
    loc->add_option("--graph", graph_path)->required();
    loc->add_option("--obs", obs_path, "Observer file: 'layer node time' lines")->required();
    loc->add_option("--beta", beta)->required()->delimiter(',');
    loc->add_option("--beta-inter", beta_inter)->required();
    loc->add_option("--threads", threads, "Worker threads (0 = all cores)");
    loc->add_option("--out", out_path);

    // experiment
    auto* exp = app.add_subcommand("experiment", "Run a Monte Carlo sweep from a JSON config");
    std::string config_path;
    std::string outcomes_path;
    std::optional<std::uint64_t> seed_override;
    exp->add_option("--config", config_path, "JSON config file")->required();
    exp->add_option("--out", out_path, "Results CSV (default stdout)");
    exp->add_option("--outcomes", outcomes_path, "Also write per-realization outcomes here");
    exp->add_option("--threads", threads, "Worker threads (0 = all cores)");
    exp->add_option("--seed", seed_override, "Override master_seed");

    // metrics
    auto* met = app.add_subcommand("metrics", "Summarize a per-realization outcomes CSV");
    std::vector<double> alphas{0.95};
    met->add_option("--outcomes", outcomes_path)->required();
    met->add_option("--alphas", alphas)->delimiter(',')->capture_default_str();
    met->add_option("--out", out_path);

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    if (!argv_rev.empty())
        argv_rev.pop_back(); // program name
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (gen->parsed()) {
            GraphGenSpec spec;
            spec.model = parse_model(gen_model);
            spec.layer_count = gen_layers;
            if (gen_nodes < 2 || gen_nodes > std::numeric_limits<node_t>::max())
                throw cli::usage_error("--nodes out of range");
            spec.nodes_per_layer = static_cast<node_t>(gen_nodes);
            spec.mean_degree = gen_degree;
            spec.seed = seed;
            MultiplexGraph g;
            try {
                g = generate_multiplex(spec);
            } catch (const std::invalid_argument& e) {
                throw cli::usage_error(e.what());
            }
            cli::Output o(out_path, out);
            write_graph(o.stream(), g, to_string(spec.model), seed);
            o.finish();
        } else if (sim->parsed()) {
            const MultiplexGraph g = cli::load_graph(graph_path);
            const ReplicaId source{static_cast<node_t>(source_node), source_layer};
            if (!g.valid(source))
                throw cli::usage_error("source replica outside the graph");
            const SpreadParams params = cli::params_for(g, beta, beta_inter);
            rng_t rng(seed);
            const int horizon = t_max > 0 ? t_max : default_horizon(g, delay_moments(params));
            const InfectionRecord rec = simulate(g, source, params, rng, horizon);
            cli::Output o(out_path, out);
            write_record(o.stream(), rec);
            o.finish();
        } else if (loc->parsed()) {
            const MultiplexGraph g = cli::load_graph(graph_path);
            std::ifstream in(obs_path);
            if (!in)
                throw std::runtime_error("cannot open observation file '" + obs_path + "'");
            const auto obs = cli::read_observations(in, g);
            const SpreadParams params = cli::params_for(g, beta, beta_inter);
            const DelayVector dv = build_delay_vector(obs.record, obs.observers);
            const SourceRanking ranking = rank_sources(g, dv, delay_moments(params), threads);
            cli::Output o(out_path, out);
            cli::write_ranking_csv(o.stream(), ranking);
            o.finish();
        } else if (exp->parsed()) {
            ExperimentConfig cfg = load_config(config_path);
            if (seed_override)
                cfg.master_seed = *seed_override;
            const ExperimentResult result = run_experiment(cfg, threads);
            {
                cli::Output o(out_path, out);
                write_results_csv(o.stream(), cfg, result.rows);
                o.finish();
            }
            if (!outcomes_path.empty()) {
                cli::Output o(outcomes_path, out);
                write_outcomes_csv(o.stream(), result);
                o.finish();
            }
            for (const auto& row : result.rows) {
                const std::size_t total = row.metrics.n_tests + row.metrics.discarded;
                if (total > 0 && row.metrics.discarded * 20 > total)
                    err << "warning: grid point " << row.point.index << " discarded "
                        << row.metrics.discarded << " of " << total << " realizations\n";
            }
        } else if (met->parsed()) {
            for (double a : alphas)
                if (!(a > 0.0 && a <= 1.0))
                    throw cli::usage_error("--alphas values must lie in (0, 1]");
            std::ifstream in(outcomes_path);
            if (!in)
                throw std::runtime_error("cannot open outcomes file '" + outcomes_path + "'");
            const OutcomeTable table = read_outcomes_csv(in);
            cli::Output o(out_path, out);
            auto& os = o.stream();
            os << "point,avg_precision";
            for (double a : alphas)
                os << ',' << css_column(a);
            os << ",n_tests,discarded\n";
            for (const auto& [point, kept] : table.kept) {
                const auto d = table.discarded.find(point);
                const std::size_t discarded = d == table.discarded.end() ? 0 : d->second;
                const MetricsSummary s = summarize(kept, alphas, discarded);
                os << point << ',' << format_number(s.avg_precision);
                for (double a : alphas) {
                    os << ',';
                    if (s.n_tests > 0)
                        os << s.css.at(a);
                    else
                        os << "NA";
                }
                os << ',' << s.n_tests << ',' << s.discarded << '\n';
            }
            o.finish();
        }
    } catch (const config_error& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const cli::usage_error& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const unusable_realization& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

inline int cli_main(int argc, char** argv) {
    return cli_main(std::vector<std::string>(argv, argv + argc));
}

} // namespace mlsl
