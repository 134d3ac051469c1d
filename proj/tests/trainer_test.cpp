#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "tabtext/blocks.hpp"
#include "tabtext/error.hpp"
#include "tabtext/negatives.hpp"
#include "tabtext/trainer.hpp"
#include "support.hpp"

using namespace tabtext;

namespace {

const WhitespaceTokenizer kTok;

// [CLS] [TAB] table... [PSG] text... with ids drawn from [8, V).
EncoderInput random_block(Rng& rng, size_t vocab, size_t table_len, size_t text_len)
{
    EncoderInput in;
    in.ids = {1, 2};
    in.tab_pos = 1;
    in.table_span = {2, 2 + table_len};
    for (size_t i = 0; i < table_len; ++i) in.ids.push_back(static_cast<int32_t>(8 + rng.uniform_index(vocab - 8)));
    in.psg_pos = in.ids.size();
    in.ids.push_back(3);
    in.text_span = {in.psg_pos + 1, in.psg_pos + 1 + text_len};
    for (size_t i = 0; i < text_len; ++i) in.ids.push_back(static_cast<int32_t>(8 + rng.uniform_index(vocab - 8)));
    return in;
}

EncoderInput random_question(Rng& rng, size_t vocab, size_t len)
{
    EncoderInput in;
    in.ids = {1};
    for (size_t i = 0; i < len; ++i) in.ids.push_back(static_cast<int32_t>(8 + rng.uniform_index(vocab - 8)));
    return in;
}

std::vector<TrainExample> random_batch(Rng& rng, size_t batch, size_t vocab)
{
    std::vector<TrainExample> out;
    for (size_t i = 0; i < batch; ++i) {
        out.push_back({random_question(rng, vocab, 3), random_block(rng, vocab, 2 + rng.uniform_index(3), rng.uniform_index(3)),
                       random_block(rng, vocab, 1 + rng.uniform_index(3), 1 + rng.uniform_index(3))});
    }
    return out;
}

DualEncoder random_model(uint64_t seed, size_t vocab, size_t dim, Pooling pooling, bool separate = false,
                         double scale = 0.5)
{
    Rng rng(seed);
    DualEncoder m;
    m.block = EncoderParams::random(vocab, dim, rng, scale);
    if (separate) m.question = EncoderParams::random(vocab, dim, rng, scale);
    m.strategy = pooling;
    return m;
}

// Straight-line loss: embed everything, list candidates, log-sum-exp.
double oracle_loss(const DualEncoder& m, const std::vector<TrainExample>& batch, NegativeConvention conv)
{
    const size_t B = batch.size();
    std::vector<MerEmbedding> q, pos, neg;
    for (const auto& ex : batch) {
        q.push_back(embed_question(m, ex.question));
        pos.push_back(embed_block(m, ex.positive));
        neg.push_back(embed_block(m, ex.negative));
    }
    double total = 0;
    for (size_t i = 0; i < B; ++i) {
        std::vector<double> s;
        for (size_t j = 0; j < B; ++j) s.push_back(score(q[i], pos[j]));
        if (conv == NegativeConvention::AllInBatch) {
            for (size_t j = 0; j < B; ++j) s.push_back(score(q[i], neg[j]));
        } else {
            s.push_back(score(q[i], neg[i]));
        }
        double z = 0;
        for (double v : s) z += std::exp(v);
        total += std::log(z) - s[i];
    }
    return total / B;
}

struct Planted {
    std::vector<TrainExample> train;
    size_t vocab = 0;
};

Planted planted_examples(uint64_t seed, size_t tables)
{
    auto p = fixtures::planted_corpus(seed, {.tables = tables, .rows = 4});
    BlockCorpus blocks(build_blocks(p.corpus));
    NegativeSampler sampler(blocks);
    auto inst = make_instances(p.train, sampler, NegativeStrategy::Mmhn, seed);
    std::vector<std::string> texts;
    for (const auto& b : blocks.blocks()) texts.push_back(flatten(b, kTok).text);
    for (const auto& q : p.train) texts.push_back(q.text);
    auto vocab = Vocabulary::build(texts, kTok);
    return {prepare_examples(inst, blocks, kTok, vocab), vocab.size()};
}

}  // namespace

TEST(SoftmaxCrossEntropy, HandValues)
{
    std::vector<double> equal(4, 0.0);
    EXPECT_NEAR(softmax_cross_entropy(equal, 0), std::log(4.0), 1e-15);
    std::vector<double> one{1, 0, 0, 0};
    EXPECT_NEAR(softmax_cross_entropy(one, 0), std::log(1 + 3 * std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(std::log(1 + 3 * std::exp(-1.0)), 0.7437, 1e-4);
    std::vector<double> big{1000, 0};
    EXPECT_NEAR(softmax_cross_entropy(big, 0), 0.0, 1e-12);
    EXPECT_NEAR(softmax_cross_entropy(big, 1), 1000.0, 1e-9);
    std::vector<double> huge{1e308, -1e308};
    EXPECT_TRUE(std::isfinite(softmax_cross_entropy(huge, 0)));
}

TEST(SoftmaxCrossEntropy, ShiftAndPermutationInvariant)
{
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        size_t m = 2 + rng.uniform_index(30);
        std::vector<double> s(m);
        for (auto& v : s) v = rng.uniform(-20, 20);
        size_t target = rng.uniform_index(m);
        double base = softmax_cross_entropy(s, target);
        double c = rng.uniform(-500, 500);
        auto shifted = s;
        for (auto& v : shifted) v += c;
        EXPECT_NEAR(softmax_cross_entropy(shifted, target), base, 1e-9 * std::max(1.0, base));
        std::vector<size_t> perm(m);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<double> permuted(m);
        size_t new_target = 0;
        for (size_t i = 0; i < m; ++i) {
            permuted[i] = s[perm[i]];
            if (perm[i] == target) new_target = i;
        }
        EXPECT_NEAR(softmax_cross_entropy(permuted, new_target), base, 1e-12 * std::max(1.0, base));
        EXPECT_GE(base, 0.0);
    }
}

TEST(BatchLoss, ZeroModelGivesLogOfCandidateCount)
{
    Rng rng(1);
    auto batch = random_batch(rng, 2, 20);
    auto m = random_model(1, 20, 4, Pooling::First);
    m.block.projection.setZero();
    EXPECT_NEAR(batch_loss(m, batch, NegativeConvention::AllInBatch).loss, std::log(4.0), 1e-15);
    EXPECT_NEAR(batch_loss(m, batch, NegativeConvention::OwnHardNegative).loss, std::log(3.0), 1e-15);
    auto big = random_batch(rng, 5, 20);
    EXPECT_NEAR(batch_loss_value(m, big, NegativeConvention::AllInBatch), std::log(10.0), 1e-15);
}

TEST(BatchLoss, MatchesStraightLineOracle)
{
    for (auto pooling : kAllPoolings) {
        for (auto conv : {NegativeConvention::AllInBatch, NegativeConvention::OwnHardNegative}) {
            for (bool separate : {false, true}) {
                Rng rng(7);
                auto batch = random_batch(rng, 4, 30);
                auto m = random_model(11, 30, 6, pooling, separate);
                double want = oracle_loss(m, batch, conv);
                EXPECT_NEAR(batch_loss(m, batch, conv, 2).loss, want, 1e-12);
                EXPECT_NEAR(batch_loss_value(m, batch, conv), want, 1e-12);
            }
        }
    }
}

TEST(BatchLoss, RejectsSingleExampleAndMismatchedTowers)
{
    Rng rng(1);
    auto batch = random_batch(rng, 1, 20);
    auto m = random_model(1, 20, 4, Pooling::First);
    EXPECT_THROW(batch_loss(m, batch, NegativeConvention::AllInBatch), Error);
    auto two = random_batch(rng, 2, 20);
    m.question = EncoderParams::random(20, 5, rng);
    try {
        batch_loss(m, two, NegativeConvention::AllInBatch);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
    }
}

TEST(BatchLoss, ThreadCountDoesNotChangeGradients)
{
    Rng rng(5);
    auto batch = random_batch(rng, 6, 25);
    auto m = random_model(2, 25, 5, Pooling::SelfAtt);
    auto a = batch_loss(m, batch, NegativeConvention::AllInBatch, 1);
    auto b = batch_loss(m, batch, NegativeConvention::AllInBatch, 4);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.grad.block.mixing, b.grad.block.mixing);
    EXPECT_EQ(a.grad.block.projection, b.grad.block.projection);
    ASSERT_EQ(a.grad.block.embedding.size(), b.grad.block.embedding.size());
    for (const auto& [id, row] : a.grad.block.embedding) EXPECT_EQ(row, b.grad.block.embedding.at(id));
}

class GradCheckTest : public ::testing::TestWithParam<std::tuple<Pooling, NegativeConvention, bool>> {};

TEST_P(GradCheckTest, AnalyticMatchesCentralDifference)
{
    auto [pooling, conv, separate] = GetParam();
    Rng rng(13);
    auto batch = random_batch(rng, 3, 16);
    auto m = random_model(21, 16, 4, pooling, separate);
    auto r = grad_check(m, batch, conv, 1e-5, 400, 1);
    EXPECT_GT(r.coordinates, 50u);
    EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(
    AllConfigs, GradCheckTest,
    ::testing::Combine(::testing::ValuesIn(kAllPoolings),
                       ::testing::Values(NegativeConvention::AllInBatch, NegativeConvention::OwnHardNegative),
                       ::testing::Bool()),
    [](const auto& info) {
        return std::string(to_string(std::get<0>(info.param))) + "_" +
               std::string(to_string(std::get<1>(info.param))) + (std::get<2>(info.param) ? "_separate" : "_shared");
    });

TEST(GradCheck, RejectsEpsilonOutsideRange)
{
    Rng rng(1);
    auto batch = random_batch(rng, 2, 16);
    auto m = random_model(1, 16, 4, Pooling::First);
    EXPECT_THROW(grad_check(m, batch, NegativeConvention::AllInBatch, 1e-7), Error);
    EXPECT_THROW(grad_check(m, batch, NegativeConvention::AllInBatch, 1e-2), Error);
}

TEST(GradCheck, AttentionGradientZeroUnlessSelfAtt)
{
    Rng rng(4);
    auto batch = random_batch(rng, 3, 16);
    for (auto pooling : kAllPoolings) {
        auto m = random_model(9, 16, 4, pooling);
        auto g = batch_loss(m, batch, NegativeConvention::AllInBatch).grad.block.attention;
        if (pooling == Pooling::SelfAtt) {
            EXPECT_GT(g.norm(), 0.0);
        } else {
            EXPECT_EQ(g.norm(), 0.0) << to_string(pooling);
        }
    }
}

TEST(GradCheck, RichardsonExtrapolationAgrees)
{
    // Fourth-order difference on a few coordinates of A as a second opinion.
    Rng rng(8);
    auto batch = random_batch(rng, 3, 16);
    auto m = random_model(3, 16, 4, Pooling::Avg);
    auto g = batch_loss(m, batch, NegativeConvention::AllInBatch).grad.block.mixing;
    const double h = 1e-3;
    for (int i = 0; i < 4; ++i) {
        auto f = [&](double delta) {
            auto probe = m;
            probe.block.mixing(i, (i + 1) % 4) += delta;
            return batch_loss_value(probe, batch, NegativeConvention::AllInBatch);
        };
        double d1 = (f(h) - f(-h)) / (2 * h);
        double d2 = (f(h / 2) - f(-h / 2)) / h;
        double rich = (4 * d2 - d1) / 3;
        EXPECT_NEAR(g(i, (i + 1) % 4), rich, 1e-8 + 1e-6 * std::abs(rich));
    }
}

TEST(Schedule, WarmupThenLinearDecay)
{
    TrainConfig c;
    c.learning_rate = 0.1;
    c.warmup_fraction = 0.25;
    // 8 steps: warmup of 2.
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 0, 8), 0.05);
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 1, 8), 0.1);
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 2, 8), 0.1);
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 5, 8), 0.1 * 3 / 6);
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 7, 8), 0.1 / 6);
    c.warmup_fraction = 0;
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 0, 4), 0.1);
    double prev = 1;
    for (size_t s = 0; s < 4; ++s) {
        double lr = learning_rate_at(c, s, 4);
        EXPECT_GT(lr, 0.0);
        EXPECT_LE(lr, prev);
        prev = lr;
    }
}

TEST(Schedule, BatchesPerEpoch)
{
    EXPECT_EQ(batches_per_epoch(10, 5), 2u);
    EXPECT_EQ(batches_per_epoch(11, 5), 2u);  // single leftover dropped
    EXPECT_EQ(batches_per_epoch(12, 5), 3u);
    EXPECT_EQ(batches_per_epoch(1, 5), 0u);
    EXPECT_EQ(batches_per_epoch(3, 5), 1u);
}

TEST(TrainConfig, ValidationAndJson)
{
    TrainConfig c;
    c.batch_size = 1;
    EXPECT_THROW(c.validate(), Error);
    c.batch_size = 4;
    c.learning_rate = -1;
    EXPECT_THROW(c.validate(), Error);
    c.learning_rate = 0.3;
    c.convention = NegativeConvention::OwnHardNegative;
    c.seed = 42;
    auto back = train_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(parse_negative_convention("some"), Error);
}

TEST(Train, ZeroLearningRateLeavesModelUnchanged)
{
    Rng rng(2);
    auto batch = random_batch(rng, 8, 20);
    auto m = random_model(2, 20, 4, Pooling::First);
    m.block.round_to_float();
    TrainConfig c;
    c.learning_rate = 0;
    c.batch_size = 4;
    c.epochs = 3;
    auto r = train(c, batch, m);
    EXPECT_EQ(r.final_model.block.embedding, m.block.embedding);
    EXPECT_EQ(r.final_model.block.mixing, m.block.mixing);
    EXPECT_EQ(r.curve.size(), 6u);
    EXPECT_EQ(r.epoch_means.size(), 3u);
}

TEST(Train, LossDecreasesAcrossSeeds)
{
    auto data = planted_examples(1, 8);
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        DualEncoder m{EncoderParams::random(data.vocab, 16, rng, 0.5), std::nullopt, Pooling::First};
        TrainConfig c;
        c.seed = seed;
        c.epochs = 6;
        c.batch_size = 8;
        c.learning_rate = 0.2;
        auto r = train(c, data.train, m);
        ASSERT_EQ(r.epoch_means.size(), 6u);
        EXPECT_LT(r.epoch_means.back(), r.epoch_means.front()) << "seed " << seed;
        EXPECT_FALSE(r.diverged);
        EXPECT_LE(r.epoch_means[r.best_epoch], r.epoch_means.back());
    }
}

TEST(Train, ResumeReproducesUninterruptedRun)
{
    auto data = planted_examples(2, 4);
    Rng rng(3);
    DualEncoder m{EncoderParams::random(data.vocab, 8, rng, 0.1), std::nullopt, Pooling::Avg};
    TrainConfig c;
    c.seed = 9;
    c.epochs = 4;
    c.batch_size = 6;
    c.learning_rate = 0.2;
    std::optional<DualEncoder> after_two;
    auto full = train(c, data.train, m, 0, [&](size_t epoch, const DualEncoder& model) {
        if (epoch == 1) after_two = model;
    });
    ASSERT_TRUE(after_two);

    // Through a checkpoint file, to cover the float round trip as well.
    fixtures::TempDir dir;
    Vocabulary vocab;
    std::vector<std::string> keys(vocab.keys());
    for (size_t i = keys.size(); i < data.vocab; ++i) keys.push_back("k" + std::to_string(i));
    save_checkpoint(dir / "ck", Checkpoint{Vocabulary::from_keys(keys), *after_two});
    auto restored = load_checkpoint(dir / "ck").model;
    auto resumed = train(c, data.train, restored, 2);
    EXPECT_EQ(resumed.final_model.block.embedding, full.final_model.block.embedding);
    EXPECT_EQ(resumed.final_model.block.projection, full.final_model.block.projection);
    ASSERT_EQ(resumed.curve.size() * 2, full.curve.size());
    for (size_t i = 0; i < resumed.curve.size(); ++i) {
        EXPECT_EQ(resumed.curve[i], full.curve[full.curve.size() / 2 + i]);
    }
}

TEST(Train, DivergenceReturnsLastGoodModel)
{
    Rng rng(2);
    auto batch = random_batch(rng, 8, 20);
    auto m = random_model(2, 20, 4, Pooling::First, false, 0.1);
    TrainConfig c;
    c.learning_rate = 1e4;
    c.warmup_fraction = 0;
    c.batch_size = 4;
    c.epochs = 20;
    c.divergence_threshold = 5.0;
    auto r = train(c, batch, m);
    EXPECT_TRUE(r.diverged);
    EXPECT_TRUE(r.final_model.block.finite());
    EXPECT_LT(r.epoch_means.size(), 20u);
}

TEST(Train, RejectsEmptyOrSingletonData)
{
    Rng rng(2);
    auto one = random_batch(rng, 1, 20);
    auto m = random_model(2, 20, 4, Pooling::First);
    TrainConfig c;
    c.batch_size = 4;
    EXPECT_THROW(train(c, std::span<const TrainExample>(), m), Error);
    EXPECT_THROW(train(c, one, m), Error);
}

TEST(Train, LossCurveCsv)
{
    fixtures::TempDir dir;
    std::vector<LossPoint> curve{{0, 0, 1.5}, {0, 1, 0.25}};
    write_loss_curve(dir / "c.csv", curve);
    EXPECT_EQ(fixtures::read_file(dir / "c.csv"), "epoch,step,loss\n0,0,1.5\n0,1,0.25\n");
}
