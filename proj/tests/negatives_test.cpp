#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "tabtext/blocks.hpp"
#include "tabtext/bm25.hpp"
#include "tabtext/error.hpp"
#include "tabtext/negatives.hpp"
#include "tabtext/text.hpp"
#include "support.hpp"

using namespace tabtext;

namespace {

const WhitespaceTokenizer kTok;

TableTextBlock make_block(const std::string& table, size_t row, std::vector<std::string> cells,
                          std::vector<std::string> passages)
{
    TableTextBlock b;
    b.table_id = table;
    b.row_index = row;
    b.block_id = make_block_id(table, row);
    b.title = "Title " + table;
    b.section_title = "Sec";
    for (size_t c = 0; c < cells.size(); ++c) b.header.push_back("c" + std::to_string(c));
    b.row = std::move(cells);
    for (size_t i = 0; i < passages.size(); ++i) {
        b.passages.push_back({b.block_id + "/p" + std::to_string(i), "P", passages[i], 0});
    }
    return b;
}

std::string table_region(const TableTextBlock& b) { return normalize_text(flatten_table_segment(b)); }
std::string passage_region(const TableTextBlock& b) { return normalize_text(flatten_passage_segment(b)); }

bool answer_free(const TableTextBlock& b, const std::string& answer)
{
    auto needle = normalize_text(answer);
    return !contains_normalized(table_region(b), needle) && !contains_normalized(passage_region(b), needle);
}

}  // namespace

TEST(LocateAnswer, Regions)
{
    auto b = make_block("t", 0, {"2003", "Extra time"}, {"The 2003 season began in March."});
    EXPECT_EQ(locate_answer(b, "Extra TIME"), AnswerLocation::InTable);
    EXPECT_EQ(locate_answer(b, "began in  march"), AnswerLocation::InPassages);
    EXPECT_EQ(locate_answer(b, "2003"), AnswerLocation::Both);
    EXPECT_EQ(locate_answer(b, "November"), AnswerLocation::Absent);
    try {
        locate_answer(b, "  ");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::MissingAnswer);
    }
}

TEST(Mmhn, AnswerInRowSwapsRowKeepsPassages)
{
    BlockCorpus blocks({make_block("t", 0, {"apple"}, {"p zero"}), make_block("t", 1, {"banana"}, {"p one"}),
                        make_block("t", 2, {"cherry"}, {"p two"})});
    NegativeSampler sampler(blocks);
    std::set<size_t> rows;
    for (uint64_t s = 0; s < 50; ++s) {
        Rng rng(s);
        auto r = sampler.mmhn(blocks[1], "banana", rng, 7);
        EXPECT_FALSE(r.fallback);
        EXPECT_EQ(r.block.block_id, "t-1#neg7");
        EXPECT_EQ(r.block.passages, blocks[1].passages);
        EXPECT_NE(r.block.row, blocks[1].row);
        rows.insert(r.block.row_index);
    }
    EXPECT_EQ(rows, (std::set<size_t>{0, 2}));
}

TEST(Mmhn, AnswerInPassageSwapsPassagesKeepsRow)
{
    BlockCorpus blocks({make_block("t", 0, {"apple"}, {"the gold answer xyz"}),
                        make_block("t", 1, {"banana"}, {"other text"}), make_block("u", 0, {"kiwi"}, {}),
                        make_block("u", 1, {"fig"}, {"also xyz"})});
    NegativeSampler sampler(blocks);
    for (uint64_t s = 0; s < 50; ++s) {
        Rng rng(s);
        auto r = sampler.mmhn(blocks[0], "xyz", rng, 0);
        EXPECT_FALSE(r.fallback);
        EXPECT_EQ(r.block.row, blocks[0].row);
        EXPECT_EQ(r.block.row_index, 0u);
        // Only block t-1 has answer-free, non-empty passages.
        EXPECT_EQ(r.block.passages, blocks[1].passages);
    }
}

TEST(Mmhn, SingleRowTableFallsBackFlagged)
{
    BlockCorpus blocks({make_block("solo", 0, {"answer"}, {"p"}), make_block("other", 0, {"x"}, {"q"})});
    NegativeSampler sampler(blocks);
    Rng rng(1);
    auto r = sampler.mmhn(blocks[0], "answer", rng, 0);
    EXPECT_TRUE(r.fallback);
    EXPECT_EQ(r.block.block_id, "other-0");
}

TEST(Mmhn, BothRegionsFallBackToAnswerFreeBlock)
{
    BlockCorpus blocks({make_block("t", 0, {"2003"}, {"in 2003"}), make_block("t", 1, {"1999"}, {"in 1999"})});
    NegativeSampler sampler(blocks);
    Rng rng(2);
    auto r = sampler.mmhn(blocks[0], "2003", rng, 0);
    EXPECT_TRUE(r.fallback);
    EXPECT_TRUE(answer_free(r.block, "2003"));
}

TEST(Mmhn, PropertiesOnRandomCorpus)
{
    // Each row's cells and passages carry their own marker words so the
    // answer can be planted in exactly one region.
    size_t checked = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto corpus = fixtures::random_corpus(seed, {.tables = 8, .max_rows = 5, .passages = 30, .link_probability = 0.6, .words = 3000});
        BlockCorpus blocks(build_blocks(corpus));
        NegativeSampler sampler(blocks);
        Rng rng(seed);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const auto& pos = blocks[i];
            std::vector<std::string> candidates;
            for (const auto& c : pos.row) {
                if (!c.empty()) candidates.push_back(c);
            }
            for (const auto& p : pos.passages) candidates.push_back(p.text.substr(0, p.text.find(' ')));
            for (const auto& answer : candidates) {
                auto loc = locate_answer(pos, answer);
                if (loc != AnswerLocation::InTable && loc != AnswerLocation::InPassages) continue;
                NegativeResult r;
                try {
                    r = sampler.mmhn(pos, answer, rng, checked);
                } catch (const Error& e) {
                    ASSERT_EQ(e.kind(), ErrorKind::Exhausted);
                    continue;
                }
                ASSERT_TRUE(answer_free(r.block, answer)) << answer;
                ASSERT_NE(r.block, pos);
                if (r.fallback) continue;
                bool same_table = table_region(r.block) == table_region(pos);
                bool same_text = passage_region(r.block) == passage_region(pos);
                ASSERT_TRUE(same_table != same_text) << pos.block_id << " / " << answer;
                ASSERT_EQ(same_table, loc == AnswerLocation::InPassages);
                ++checked;
            }
        }
    }
    EXPECT_GE(checked, 200u);
}

TEST(RandomNegative, UniformOverAnswerFreeRows)
{
    std::vector<TableTextBlock> v;
    for (size_t r = 0; r < 5; ++r) {
        v.push_back(make_block("t", r, {r == 2 || r == 4 ? "gold" : "row" + std::to_string(r)}, {}));
    }
    BlockCorpus blocks(v);
    NegativeSampler sampler(blocks);
    std::map<size_t, size_t> counts;
    Rng rng(99);
    const size_t draws = 10000;
    for (size_t i = 0; i < draws; ++i) {
        auto r = sampler.random(blocks[2], "gold", rng);
        EXPECT_FALSE(r.fallback);
        ++counts[r.block.row_index];
    }
    ASSERT_EQ(counts.size(), 3u);  // rows 0, 1, 3
    double expected = draws / 3.0, chi2 = 0;
    for (auto [row, c] : counts) {
        EXPECT_NE(row, 2u);
        EXPECT_NE(row, 4u);
        chi2 += (c - expected) * (c - expected) / expected;
    }
    EXPECT_LT(chi2, 9.21);  // p = 0.01 at 2 degrees of freedom
}

TEST(RandomNegative, SeededAndGlobalFallback)
{
    BlockCorpus blocks({make_block("a", 0, {"x"}, {}), make_block("a", 1, {"y"}, {}), make_block("b", 0, {"z"}, {})});
    NegativeSampler sampler(blocks);
    Rng r1(5), r2(5);
    EXPECT_EQ(sampler.random(blocks[0], "q", r1).block, sampler.random(blocks[0], "q", r2).block);

    BlockCorpus lone({make_block("a", 0, {"x"}, {}), make_block("b", 0, {"z"}, {})});
    NegativeSampler s2(lone);
    Rng rng(1);
    auto r = s2.random(lone[0], "q", rng);
    EXPECT_TRUE(r.fallback);
    EXPECT_EQ(r.block.block_id, "b-0");

    BlockCorpus all_answer({make_block("a", 0, {"q"}, {}), make_block("b", 0, {"q"}, {})});
    NegativeSampler s3(all_answer);
    EXPECT_THROW(s3.random(all_answer[0], "q", rng), Error);
}

TEST(Bm25Negative, ExcludesGoldTableAndAnswerBlocks)
{
    BlockCorpus blocks({make_block("gold", 0, {"unique title words"}, {}),
                        make_block("near", 0, {"unique title words answer"}, {}),
                        make_block("next", 0, {"unique words"}, {}), make_block("far", 0, {"nothing"}, {})});
    std::vector<FlattenedBlock> flats;
    for (const auto& b : blocks.blocks()) flats.push_back(flatten(b, kTok));
    auto index = Bm25Index::build(flats, kTok);
    NegativeSampler sampler(blocks, &index);
    auto neg = sampler.bm25("unique title words", "answer", "gold");
    EXPECT_EQ(neg.block_id, "next-0");
    EXPECT_THROW(sampler.bm25("unique", "words", "gold"), Error);

    NegativeSampler no_index(blocks);
    try {
        no_index.bm25("q", "a", "gold");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyInput);
    }
}

TEST(Bm25Negative, FirstEligibleOfReferenceRanking)
{
    auto corpus = fixtures::random_corpus(77, {.tables = 6, .max_rows = 4, .words = 15});
    BlockCorpus blocks(build_blocks(corpus));
    ASSERT_GE(blocks.size(), 10u);
    std::vector<FlattenedBlock> flats;
    for (const auto& b : blocks.blocks()) flats.push_back(flatten(b, kTok));
    auto index = Bm25Index::build(flats, kTok);
    NegativeSampler sampler(blocks, &index);

    // Reference ranking: brute-force BM25 over whitespace words.
    auto terms = [](const std::string& text) {
        std::vector<std::string> out;
        for (const auto& w : WhitespaceTokenizer().words(text)) {
            if (is_special_marker(w)) continue;
            auto k = term_key(w);
            if (!k.empty()) out.push_back(k);
        }
        return out;
    };
    std::vector<std::vector<std::string>> docs;
    double avg = 0;
    for (const auto& f : flats) {
        docs.push_back(terms(f.text));
        avg += docs.back().size();
    }
    avg /= docs.size();
    const double N = docs.size();
    for (size_t qi = 0; qi < blocks.size(); ++qi) {
        const auto& pos = blocks[qi];
        std::string question = pos.row.empty() ? "w1" : pos.row[0] + " w3 w7";
        std::string answer = "zzz-never";
        std::vector<std::pair<double, std::string>> ranked;
        for (size_t d = 0; d < docs.size(); ++d) {
            double s = 0;
            bool match = false;
            for (const auto& t : terms(question)) {
                double tf = std::count(docs[d].begin(), docs[d].end(), t);
                double df = 0;
                for (const auto& doc : docs) df += std::count(doc.begin(), doc.end(), t) > 0;
                if (tf == 0) continue;
                match = true;
                double idf = std::log(1 + (N - df + 0.5) / (df + 0.5));
                s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * docs[d].size() / avg));
            }
            if (match) ranked.push_back({-s, flats[d].block_id});
        }
        std::sort(ranked.begin(), ranked.end());
        std::string expected;
        for (const auto& [s, id] : ranked) {
            if (blocks.find(id)->table_id != pos.table_id) {
                expected = id;
                break;
            }
        }
        if (expected.empty()) {
            EXPECT_THROW(sampler.bm25(question, answer, pos.table_id), Error);
        } else {
            EXPECT_EQ(sampler.bm25(question, answer, pos.table_id).block_id, expected) << question;
        }
    }
}

TEST(Instances, DeterministicAnswerFreeAndRoundTrip)
{
    auto planted = fixtures::planted_corpus(3, {.tables = 6, .rows = 4});
    BlockCorpus blocks(build_blocks(planted.corpus));
    std::vector<FlattenedBlock> flats;
    for (const auto& b : blocks.blocks()) flats.push_back(flatten(b, kTok));
    auto index = Bm25Index::build(flats, kTok);
    NegativeSampler sampler(blocks, &index);
    for (auto strategy : {NegativeStrategy::Mmhn, NegativeStrategy::Bm25, NegativeStrategy::Random}) {
        InstanceReport rep;
        auto a = make_instances(planted.train, sampler, strategy, 11, &rep, 1);
        auto b = make_instances(planted.train, sampler, strategy, 11, nullptr, 3);
        ASSERT_EQ(a.size(), planted.train.size());
        EXPECT_EQ(rep.built, a.size());
        for (size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(to_json(a[i]), to_json(b[i]));
            const auto* pos = blocks.find(a[i].positive_block_id);
            ASSERT_NE(pos, nullptr);
            EXPECT_NE(a[i].hard_negative, *pos);
            EXPECT_TRUE(answer_free(a[i].hard_negative, planted.train[i].answer));
        }
        if (strategy == NegativeStrategy::Mmhn) {
            EXPECT_EQ(rep.fallbacks, 0u);
        }
        fixtures::TempDir dir;
        save_instances(a, dir / "i.jsonl");
        auto back = load_instances(dir / "i.jsonl");
        ASSERT_EQ(back.size(), a.size());
        for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(to_json(back[i]), to_json(a[i]));
    }
}

TEST(Instances, PositiveFromAnswerWhenGoldRowMissing)
{
    BlockCorpus blocks({make_block("t", 0, {"a"}, {}), make_block("t", 1, {"b"}, {"has gold"})});
    Question q{"q", "?", "gold", "t", std::nullopt, Split::Train};
    EXPECT_EQ(positive_block(q, blocks)->block_id, "t-1");
    q.answer = "nowhere";
    EXPECT_EQ(positive_block(q, blocks), nullptr);
}
