#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "mlsl/locator.hpp"
#include "mlsl/metrics.hpp"
#include "oracle.hpp"

using namespace mlsl;

namespace {

MultiplexGraph path_graph(node_t n) {
    std::vector<LayerGraph::edge_t> e;
    for (node_t u = 0; u + 1 < n; ++u)
        e.emplace_back(u, u + 1);
    return MultiplexGraph({LayerGraph(n, e)});
}

DelayVector delays(std::vector<ReplicaId> reporting, std::vector<int> d) {
    DelayVector dv;
    dv.reference = reporting.front();
    dv.reporting = std::move(reporting);
    dv.d = std::move(d);
    return dv;
}

std::vector<std::size_t> flat(const MultiplexGraph& g, const std::vector<ReplicaId>& r) {
    std::vector<std::size_t> out;
    for (auto x : r)
        out.push_back(g.flat_index(x));
    return out;
}

bool rel_close(double a, double b, double tol = 1e-9) {
    if (a == b)
        return true;
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Random multiplex instance with a usable delay vector.
struct Instance {
    MultiplexGraph g;
    DelayVector dv;
    DelayMoments moments;
};

Instance random_instance(std::uint64_t seed) {
    rng_t rng(seed);
    std::uniform_int_distribution<int> layers(1, 3);
    const int L = layers(rng);
    const node_t n_l = static_cast<node_t>(24 / L);
    std::uniform_int_distribution<node_t> size(3, n_l);
    const node_t n = size(rng);
    std::vector<LayerGraph> ls;
    for (int l = 0; l < L; ++l)
        ls.push_back(generate_er_layer(n, std::min(2.5, n - 1.0), rng));
    Instance inst{MultiplexGraph(std::move(ls)), {}, {}};

    const double grid[] = {0.1, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.75, 0.8, 0.9};
    std::uniform_int_distribution<int> pick(0, 9);
    std::vector<double> beta;
    for (int l = 0; l < L; ++l)
        beta.push_back(grid[pick(rng)]);
    const SpreadParams params(beta, grid[pick(rng)]);
    inst.moments = delay_moments(params);

    std::uniform_int_distribution<std::size_t> replica(0, inst.g.replica_count() - 1);
    for (;;) {
        const ReplicaId src = inst.g.replica(replica(rng));
        const auto rec = simulate(inst.g, src, params, rng, 2000);
        ObserverSet obs;
        for (std::size_t f = 0; f < inst.g.replica_count(); ++f)
            if (std::bernoulli_distribution(0.35)(rng))
                obs.observers.push_back(inst.g.replica(f));
        try {
            inst.dv = build_delay_vector(rec, obs);
            return inst;
        } catch (const unusable_realization&) {
        }
    }
}

} // namespace

TEST(BuildPathTree, DirectHopBeatsInterlayerDetour) {
    // mu_1 = 2, mu_2 = 1, mu_inter = 1: direct layer-0 hop (2) vs 1 + 1 + 1.
    const MultiplexGraph g({LayerGraph(2, {{0, 1}}), LayerGraph(2, {{0, 1}})});
    const DelayMoments m = delay_moments(SpreadParams({0.5, 1.0}, 1.0));
    const auto t = build_path_tree(g, 0, {1}, m);
    EXPECT_DOUBLE_EQ(t.path_weight[0], 2.0);
    EXPECT_EQ(t.parent[1], 0);
    EXPECT_EQ(t.parent_class[1], 0);
    EXPECT_FALSE(t.in_tree[2]);
    EXPECT_FALSE(t.in_tree[3]);
}

TEST(BuildPathTree, CheaperDetourIsTaken) {
    // mu_1 = 10 makes the detour (1 + 1 + 1) shorter.
    const MultiplexGraph g({LayerGraph(2, {{0, 1}}), LayerGraph(2, {{0, 1}})});
    const DelayMoments m = delay_moments(SpreadParams({0.1, 1.0}, 1.0));
    const auto t = build_path_tree(g, 0, {1}, m);
    EXPECT_DOUBLE_EQ(t.path_weight[0], 3.0);
    EXPECT_EQ(t.parent[1], 3);
    EXPECT_EQ(t.parent[3], 2);
    EXPECT_EQ(t.parent[2], 0);
}

TEST(BuildPathTree, EqualWeightsGiveBfsTreeWithLowestPredecessor) {
    // 4-cycle 0-1-2-3-0: node 2 is reachable via 1 or 3; 1 wins.
    const MultiplexGraph g({LayerGraph(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}})});
    const DelayMoments m = delay_moments(SpreadParams({0.5}, 0.5));
    const auto t = build_path_tree(g, 0, {2, 3}, m);
    EXPECT_EQ(t.parent[2], 1);
    EXPECT_EQ(t.parent[3], 0);
    EXPECT_EQ(t.depth[2], 2);
    EXPECT_DOUBLE_EQ(t.path_weight[0], 4.0);
}

TEST(BuildPathTree, RootObserverHasZeroWeight) {
    const MultiplexGraph g = path_graph(3);
    const auto t = build_path_tree(g, 1, {1, 2}, delay_moments(SpreadParams({0.5}, 0.5)));
    EXPECT_DOUBLE_EQ(t.path_weight[0], 0.0);
    EXPECT_DOUBLE_EQ(t.path_weight[1], 2.0);
}

TEST(BuildPathTree, UnreachableObserver) {
    const MultiplexGraph g({LayerGraph(4, {{0, 1}, {2, 3}})});
    const auto t = build_path_tree(g, 0, {1, 3}, delay_moments(SpreadParams({0.5}, 0.5)));
    EXPECT_FALSE(t.covers_all());
    EXPECT_TRUE(std::isinf(t.path_weight[1]));
}

TEST(DeterministicDelay, Examples) {
    const DelayMoments unit = delay_moments(SpreadParams({1.0}, 1.0));
    // o_1 - v - o_2
    {
        const MultiplexGraph g = path_graph(3);
        const auto t = build_path_tree(g, 1, {0, 2}, unit);
        EXPECT_EQ(deterministic_delay(t), Eigen::VectorXd::Zero(1));
    }
    // o_1 - a - b - o_2, candidate b, mu = 2 per link
    {
        const MultiplexGraph g = path_graph(4);
        const auto t = build_path_tree(g, 2, {0, 3}, delay_moments(SpreadParams({0.5}, 0.5)));
        ASSERT_EQ(deterministic_delay(t).size(), 1);
        EXPECT_DOUBLE_EQ(deterministic_delay(t)[0], -2.0);
    }
    // candidate = o_1
    {
        const MultiplexGraph g = path_graph(4);
        const auto t = build_path_tree(g, 0, {0, 2, 3}, unit);
        const Eigen::VectorXd mu = deterministic_delay(t);
        EXPECT_DOUBLE_EQ(mu[0], 2.0);
        EXPECT_DOUBLE_EQ(mu[1], 3.0);
    }
}

TEST(Covariance, StarSharesReferenceLink) {
    // Root 0, leaves 1, 2, 3 are observers (1 is the reference); sigma^2 = 2.
    const MultiplexGraph g({LayerGraph(4, {{0, 1}, {0, 2}, {0, 3}})});
    const auto t = build_path_tree(g, 0, {1, 2, 3}, delay_moments(SpreadParams({0.5}, 0.5)));
    Eigen::MatrixXd expected(2, 2);
    expected << 4, 2, 2, 4;
    EXPECT_TRUE(covariance(t).isApprox(expected));
    EXPECT_EQ(deterministic_delay(t), Eigen::VectorXd::Zero(2));
}

TEST(Covariance, OppositeSidesOfPath) {
    const MultiplexGraph g = path_graph(5);
    const auto t = build_path_tree(g, 2, {0, 4}, delay_moments(SpreadParams({0.5}, 0.5)));
    const Eigen::MatrixXd lambda = covariance(t);
    ASSERT_EQ(lambda.rows(), 1);
    EXPECT_DOUBLE_EQ(lambda(0, 0), 8.0);
}

TEST(Covariance, ZeroVarianceIsZeroMatrix) {
    const MultiplexGraph g({LayerGraph(4, {{0, 1}, {0, 2}, {0, 3}})});
    const auto t = build_path_tree(g, 0, {1, 2, 3}, delay_moments(SpreadParams({1.0}, 1.0)));
    EXPECT_TRUE(covariance(t).isZero(0.0));
}

TEST(Score, Examples) {
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    Eigen::MatrixXd lambda(2, 2);
    lambda << 4, 2, 2, 4;
    Eigen::VectorXd d(2);
    d << 3, 7;
    EXPECT_EQ(score(zero, lambda, d), 0.0);

    Eigen::VectorXd mu(1), d1(1);
    mu << 4;
    d1 << 4;
    Eigen::MatrixXd l1(1, 1);
    l1 << 2;
    // 4 * (1 / (2 + 2e-9)) * (4 - 2)
    EXPECT_NEAR(score(mu, l1, d1), 4.0, 1e-8);
    EXPECT_DOUBLE_EQ(score(mu, l1, d1), 8.0 / (2.0 + 2e-9));
}

TEST(Score, SingularMatrixIsRidged) {
    Eigen::VectorXd mu(2), d(2);
    mu << 1, 2;
    d << 1, 2;
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
    // (mu . (d - mu/2)) / 1e-12
    EXPECT_NEAR(score(mu, zero, d), 2.5e12, 1.0);
    EXPECT_THROW(score(mu, Eigen::MatrixXd::Zero(3, 3), d), std::invalid_argument);
}

TEST(RankSources, PathCentreWins) {
    const MultiplexGraph g = path_graph(5);
    const DelayMoments m = delay_moments(SpreadParams({0.9}, 0.9));
    const SourceRanking r = rank_sources(g, delays({{0, 0}, {4, 0}}, {0}), m);
    EXPECT_EQ(r.top().flat, 2u);
    EXPECT_EQ(r.top_tie_size(), 1u);

    const auto ref = oracle::score_all(g, {0, 4}, {0}, m);
    for (const auto& e : r.entries())
        EXPECT_TRUE(rel_close(e.score, ref[e.flat].score));
}

TEST(RankSources, SymmetricCandidatesTie) {
    const MultiplexGraph g({LayerGraph(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}})});
    const SourceRanking r =
        rank_sources(g, delays({{0, 0}, {2, 0}}, {0}), delay_moments(SpreadParams({0.5}, 0.5)));
    EXPECT_EQ(r.top_tie_size(), 2u);
    EXPECT_EQ(r.entries()[0].flat, 1u);
    EXPECT_EQ(r.entries()[1].flat, 3u);
    EXPECT_EQ(source_rank(r, 1), 2u);
    EXPECT_EQ(source_rank(r, 3), 2u);
}

TEST(RankSources, DuplexCycleMatchesOracle) {
    std::vector<LayerGraph::edge_t> cycle{{0, 1}, {1, 2}, {2, 3}, {0, 3}};
    const MultiplexGraph g({LayerGraph(4, cycle), LayerGraph(4, cycle)});
    const SpreadParams params({0.6, 0.4}, 0.9);
    const DelayMoments m = delay_moments(params);
    rng_t rng(5);
    for (int run = 0; run < 20; ++run) {
        const auto rec = simulate(g, {static_cast<node_t>(run % 4), 0}, params, rng, 1000);
        ObserverSet obs;
        obs.observers = {{0, 0}, {2, 0}, {1, 1}, {3, 1}};
        const DelayVector dv = build_delay_vector(rec, obs);
        const SourceRanking r = rank_sources(g, dv, m);
        const auto ref = oracle::score_all(g, flat(g, dv.reporting), dv.d, m);
        for (const auto& e : r.entries())
            EXPECT_TRUE(rel_close(e.score, ref[e.flat].score))
                << "candidate " << e.flat << ": " << e.score << " vs " << ref[e.flat].score;
    }
}

TEST(RankSources, RandomSmallGraphsMatchOracle) {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const Instance inst = random_instance(seed);
        const SourceRanking r = rank_sources(inst.g, inst.dv, inst.moments);
        const auto ref =
            oracle::score_all(inst.g, flat(inst.g, inst.dv.reporting), inst.dv.d, inst.moments);
        ASSERT_EQ(r.size(), inst.g.replica_count());
        for (const auto& e : r.entries()) {
            if (!std::isfinite(ref[e.flat].score)) {
                EXPECT_FALSE(e.valid);
                continue;
            }
            EXPECT_TRUE(rel_close(e.score, ref[e.flat].score))
                << "seed " << seed << " candidate " << e.flat << ": " << e.score << " vs "
                << ref[e.flat].score;
        }
    }
}

TEST(RankSources, CovarianceMatchesOracleEntrywise) {
    for (std::uint64_t seed = 100; seed < 130; ++seed) {
        const Instance inst = random_instance(seed);
        const auto obs = flat(inst.g, inst.dv.reporting);
        const auto ref = oracle::score_all(inst.g, obs, inst.dv.d, inst.moments);
        for (std::size_t v = 0; v < inst.g.replica_count(); ++v) {
            const auto t = build_path_tree(inst.g, v, obs, inst.moments);
            if (!t.covers_all())
                continue;
            const Eigen::MatrixXd lambda = covariance(t);
            const Eigen::VectorXd mu = deterministic_delay(t);
            for (Eigen::Index i = 0; i < lambda.rows(); ++i) {
                EXPECT_TRUE(rel_close(mu[i], ref[v].mu_v[i], 1e-12));
                for (Eigen::Index j = 0; j < lambda.cols(); ++j)
                    EXPECT_TRUE(rel_close(lambda(i, j), ref[v].lambda[i][j], 1e-12));
            }
        }
    }
}

TEST(RankSources, RidgedCovarianceIsPositiveDefinite) {
    for (std::uint64_t seed = 200; seed < 220; ++seed) {
        const Instance inst = random_instance(seed);
        const auto obs = flat(inst.g, inst.dv.reporting);
        for (std::size_t v = 0; v < inst.g.replica_count(); ++v) {
            const auto t = build_path_tree(inst.g, v, obs, inst.moments);
            if (!t.covers_all())
                continue;
            Eigen::MatrixXd lambda = covariance(t);
            EXPECT_TRUE(lambda.isApprox(lambda.transpose()));
            lambda.diagonal().array() += ridge_for(lambda);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda);
            EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
        }
    }
}

TEST(RankSources, ScalingDelaysKeepsOrder) {
    for (std::uint64_t seed = 300; seed < 320; ++seed) {
        Instance inst = random_instance(seed);
        const SourceRanking base = rank_sources(inst.g, inst.dv, inst.moments);
        DelayVector scaled = inst.dv;
        for (int& x : scaled.d)
            x *= 2;
        const SourceRanking r = rank_sources(inst.g, scaled, inst.moments.scaled(2.0));
        ASSERT_EQ(base.size(), r.size());
        EXPECT_EQ(base.top().flat, r.top().flat);
        for (std::size_t k = 0; k < base.size(); ++k) {
            EXPECT_EQ(base.entries()[k].flat, r.entries()[k].flat);
            if (base.entries()[k].valid)
                EXPECT_TRUE(rel_close(base.entries()[k].score, r.entries()[k].score, 1e-8));
        }
    }
}

TEST(RankSources, SingleLayerMatchesClassicEstimator) {
    for (std::uint64_t seed = 400; seed < 420; ++seed) {
        rng_t rng(seed);
        const MultiplexGraph g({generate_er_layer(20, 3.0, rng)});
        const SpreadParams params({0.6}, 0.5);
        const auto rec = simulate(g, {0, 0}, params, rng, 1000);
        ObserverSet obs;
        for (node_t u = 0; u < 20; u += 3)
            obs.observers.push_back({u, 0});
        DelayVector dv;
        try {
            dv = build_delay_vector(rec, obs);
        } catch (const unusable_realization&) {
            continue;
        }
        const DelayMoments m = delay_moments(params);
        const SourceRanking r = rank_sources(g, dv, m);
        const auto ref = oracle::score_all(g, flat(g, dv.reporting), dv.d, m);
        for (const auto& e : r.entries())
            if (e.valid)
                EXPECT_TRUE(rel_close(e.score, ref[e.flat].score));
    }
}

TEST(RankSources, DeterministicAcrossThreadCounts) {
    GraphGenSpec spec{GraphModel::ER, 2, 60, 6.0, 3};
    const MultiplexGraph g = generate_multiplex(spec);
    const SpreadParams params({0.5, 0.5}, 0.4);
    rng_t rng(1);
    const auto rec = simulate(g, {0, 0}, params, rng);
    rng_t orng(2);
    const DelayVector dv = build_delay_vector(rec, place_observers(g, {0.15, 0.15}, orng));
    const DelayMoments m = delay_moments(params);
    const SourceRanking a = rank_sources(g, dv, m, 1);
    const SourceRanking b = rank_sources(g, dv, m, 4);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a.entries()[k].flat, b.entries()[k].flat);
        EXPECT_EQ(a.entries()[k].score, b.entries()[k].score);
        EXPECT_EQ(a.group_of(k), b.group_of(k));
    }
}

TEST(RankSources, UnreachableCandidatesRankLast) {
    const MultiplexGraph g({LayerGraph(5, {{0, 1}, {1, 2}, {3, 4}})});
    const SourceRanking r =
        rank_sources(g, delays({{0, 0}, {2, 0}}, {2}), delay_moments(SpreadParams({0.5}, 0.5)));
    EXPECT_EQ(r.size(), 5u);
    EXPECT_FALSE(r.entries()[3].valid);
    EXPECT_FALSE(r.entries()[4].valid);
    EXPECT_EQ(r.group_of(3), r.group_of(4));
    EXPECT_EQ(source_rank(r, 4), 5u);
    EXPECT_EQ(r.top().flat, 0u);
}

TEST(RankSources, RejectsShortDelayVectors) {
    const MultiplexGraph g = path_graph(3);
    EXPECT_THROW(rank_sources(g, delays({{0, 0}}, {}), delay_moments(SpreadParams({0.5}, 0.5))),
                 std::invalid_argument);
}

TEST(SourceRanking, TieGroupsUseRelativeTolerance) {
    auto cs = [](std::size_t f, double s) {
        CandidateScore c;
        c.flat = f;
        c.candidate = {static_cast<node_t>(f), 0};
        c.score = s;
        c.valid = true;
        return c;
    };
    const SourceRanking r({cs(0, 1.0), cs(1, 1.0 + 5e-10), cs(2, 0.5), cs(3, 1.0 - 2e-9)});
    EXPECT_EQ(r.top().flat, 1u);
    EXPECT_EQ(r.top_tie_size(), 2u);
    EXPECT_EQ(r.group_count(), 3u);
    EXPECT_EQ(*r.position_of(2), 3u);
}
