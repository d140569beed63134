#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "rwa/retrieval.hpp"
#include "rwa/synthetic.hpp"
#include "test_util.hpp"

namespace rwa {
namespace {

using Ranks = std::vector<std::size_t>;

TEST(FinalSimilarity, Examples) {
    EXPECT_DOUBLE_EQ(final_similarity(0.2, 0.3), 0.5);
    EXPECT_EQ(final_similarity(0.7, 0.0), 0.7);
    EXPECT_EQ(final_similarity(-1.0, -1.0), -2.0);
}

TEST(RankOfTruth, Examples) {
    EXPECT_EQ(rank_of_truth<double>(std::vector<double>{0.9, 0.1, 0.5}, 0), 1u);
    EXPECT_EQ(rank_of_truth<double>(std::vector<double>{0.5, 0.5}, 1), 2u);
    EXPECT_EQ(rank_of_truth<double>(std::vector<double>{0.1, 0.2, 0.9}, 0), 3u);
    EXPECT_THROW((void)rank_of_truth<double>(std::vector<double>{0.1}, 1), std::out_of_range);
}

TEST(RankOfTruth, AgreesWithFullSort) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> s(1 + trial % 40);
        for (auto& x : s) x = g(rng);
        const std::size_t truth = trial % s.size();
        std::vector<std::size_t> order(s.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
        const auto pos = std::find(order.begin(), order.end(), truth) - order.begin();
        EXPECT_EQ(rank_of_truth<double>(s, truth), static_cast<std::size_t>(pos) + 1);
    }
}

TEST(Metrics, Examples) {
    const Ranks r{1, 3, 11};
    EXPECT_NEAR(recall_at_k(r, 1), 33.33, 0.01);
    EXPECT_NEAR(recall_at_k(r, 5), 66.67, 0.01);
    EXPECT_NEAR(recall_at_k(r, 10), 66.67, 0.01);
    EXPECT_EQ(median_rank(r), 3.0);

    const Ranks ones(7, 1);
    for (std::size_t k : {1, 5, 10}) EXPECT_EQ(recall_at_k(ones, k), 100.0);
    EXPECT_EQ(median_rank(ones), 1.0);
    EXPECT_EQ(median_rank(Ranks{2, 4}), 3.0);
    EXPECT_THROW((void)median_rank(Ranks{}), std::invalid_argument);
}

TEST(Metrics, OrderingAndPermutationInvariance) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto scores = random_normal<double>(12, 12, rng);
        auto ranks = ranks_from_scores(scores);
        const auto m = metrics_from_ranks(ranks, Direction::t2v);
        EXPECT_LE(m.r1, m.r5);
        EXPECT_LE(m.r5, m.r10);
        EXPECT_GE(m.median_rank, 1.0);

        // Permute the gallery together with the truth mapping.
        std::vector<std::size_t> perm(12);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        Ranks permuted;
        for (std::size_t q = 0; q < 12; ++q) {
            std::vector<double> row(12);
            for (std::size_t g = 0; g < 12; ++g) row[perm[g]] = scores(q, g);
            permuted.push_back(rank_of_truth<double>(row, perm[q]));
        }
        EXPECT_EQ(metrics_from_ranks(permuted, Direction::t2v), m);
    }
}

TEST(Metrics, JsonReport) {
    const auto j = metrics_to_json(metrics_from_ranks({1, 2}, Direction::v2t, "abc"));
    EXPECT_EQ(j["direction"], "v2t");
    EXPECT_EQ(j["num_queries"], 2);
    EXPECT_EQ(j["checkpoint_id"], "abc");
    for (const char* k : {"R1", "R5", "R10", "MedR"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(parse_direction("t2v"), Direction::t2v);
    EXPECT_THROW((void)parse_direction("x"), std::invalid_argument);
}

TEST(ScoreMatrix, UsesDirectionAppropriateLocalTerm) {
    SimilarityBundle<double> b{Tensor<double>{{0.1, 0.2}, {0.3, 0.4}}, Tensor<double>{{1, 2}, {3, 4}}, Tensor<double>{{10, 20}, {30, 40}}};
    // t2v: query caption q, gallery video g -> global(g,q) + l2v(q,g).
    EXPECT_EQ(score_matrix(b, Direction::t2v), (Tensor<double>{{10.1, 20.3}, {30.2, 40.4}}));
    // v2t: query video q, gallery caption g -> global(q,g) + v2l(q,g).
    EXPECT_EQ(score_matrix(b, Direction::v2t), (Tensor<double>{{1.1, 2.2}, {3.3, 4.4}}));
}

TEST(Evaluate, PerfectScoresGivePerfectRecall) {
    Tensor<double> s(5, 5, -1.0);
    for (std::size_t i = 0; i < 5; ++i) s(i, i) = 1.0;
    const auto m = metrics_from_ranks(ranks_from_scores(s), Direction::t2v);
    EXPECT_EQ(m.r1, 100.0);
    EXPECT_EQ(m.median_rank, 1.0);
}

TEST(Evaluate, UntrainedModelIsNearChance) {
    double sum = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PlantedParams p;
        p.train_videos = 2;
        p.test_videos = 32;
        p.seed = seed;
        const auto data = generate_planted_dataset(p);
        ModelConfig cfg;
        cfg.vocab_size = data.test.manifest.vocab.table_size();
        const auto params = init_parameters<float>(cfg, 100 + seed);
        const auto m = evaluate_retrieval(params, cfg, data.test, Direction::t2v, evaluation_sampling());
        EXPECT_GE(m.median_rank, 8.0) << "seed " << seed;
        EXPECT_LE(m.median_rank, 25.0) << "seed " << seed;
        sum += m.median_rank;
    }
    EXPECT_NEAR(sum / 10, 16.5, 4.0);
}

TEST(Evaluate, EmptySplitIsAnError) {
    ModelConfig cfg;
    EXPECT_THROW((void)evaluate_retrieval(init_parameters<float>(cfg, 0), cfg, Dataset{}, Direction::t2v, evaluation_sampling()), std::invalid_argument);
}

TEST(Fingerprint, TracksParameterValues) {
    ModelConfig cfg;
    auto a = init_parameters<float>(cfg, 0);
    const auto fa = parameter_fingerprint(a);
    EXPECT_EQ(fa.size(), 16u);
    EXPECT_EQ(parameter_fingerprint(init_parameters<float>(cfg, 0)), fa);
    a.at(0).data[0] += 1e-3f;
    EXPECT_NE(parameter_fingerprint(a), fa);
}

}  // namespace
}  // namespace rwa
