#include "tabtext/negatives.hpp"

#include <functional>

#include "tabtext/error.hpp"
#include "tabtext/parallel.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

std::string_view to_string(AnswerLocation location)
{
    switch (location) {
    case AnswerLocation::InTable: return "in_table";
    case AnswerLocation::InPassages: return "in_passages";
    case AnswerLocation::Both: return "both";
    case AnswerLocation::Absent: return "absent";
    }
    return "absent";
}

std::string_view to_string(NegativeStrategy strategy)
{
    switch (strategy) {
    case NegativeStrategy::Mmhn: return "mmhn";
    case NegativeStrategy::Bm25: return "bm25";
    case NegativeStrategy::Random: return "random";
    }
    return "mmhn";
}

NegativeStrategy parse_negative_strategy(std::string_view name)
{
    if (name == "mmhn") return NegativeStrategy::Mmhn;
    if (name == "bm25") return NegativeStrategy::Bm25;
    if (name == "random") return NegativeStrategy::Random;
    throw Error(ErrorKind::InvalidArgument, "unknown negative strategy '" + std::string(name) + "'");
}

namespace {

AnswerLocation classify(bool in_table, bool in_passages)
{
    if (in_table && in_passages) return AnswerLocation::Both;
    if (in_table) return AnswerLocation::InTable;
    if (in_passages) return AnswerLocation::InPassages;
    return AnswerLocation::Absent;
}

}  // namespace

AnswerLocation locate_answer(const TableTextBlock& block, std::string_view answer)
{
    auto needle = normalize_text(answer);
    if (needle.empty()) {
        throw Error(ErrorKind::MissingAnswer, "answer is empty");
    }
    return classify(contains_normalized(normalize_text(flatten_table_segment(block)), needle),
                    contains_normalized(normalize_text(flatten_passage_segment(block)), needle));
}

NegativeSampler::NegativeSampler(const BlockCorpus& blocks, const Bm25Index* bm25) : m_blocks(blocks), m_bm25(bm25)
{
    m_table_regions.reserve(blocks.size());
    m_passage_regions.reserve(blocks.size());
    for (const auto& b : blocks.blocks()) {
        m_table_regions.push_back(normalize_text(flatten_table_segment(b)));
        m_passage_regions.push_back(normalize_text(flatten_passage_segment(b)));
    }
}

bool NegativeSampler::contains_answer(size_t i, std::string_view needle) const
{
    return contains_normalized(m_table_regions[i], needle) || contains_normalized(m_passage_regions[i], needle);
}

std::optional<size_t> NegativeSampler::sample_index(Rng& rng, const std::function<bool(size_t)>& eligible) const
{
    const size_t n = m_blocks.size();
    if (n == 0) {
        return std::nullopt;
    }
    // Rejection sampling is uniform over the eligible set; the scan below
    // handles sparse eligibility.
    for (int attempt = 0; attempt < 32; ++attempt) {
        size_t i = static_cast<size_t>(rng.uniform_index(n));
        if (eligible(i)) {
            return i;
        }
    }
    std::vector<size_t> pool;
    for (size_t i = 0; i < n; ++i) {
        if (eligible(i)) {
            pool.push_back(i);
        }
    }
    if (pool.empty()) {
        return std::nullopt;
    }
    return pool[static_cast<size_t>(rng.uniform_index(pool.size()))];
}

NegativeResult NegativeSampler::random(const TableTextBlock& positive, std::string_view answer, Rng& rng) const
{
    auto needle = normalize_text(answer);
    std::vector<size_t> same_table;
    for (size_t i : m_blocks.table_blocks(positive.table_id)) {
        if (m_blocks[i].block_id != positive.block_id && !contains_answer(i, needle)) {
            same_table.push_back(i);
        }
    }
    if (!same_table.empty()) {
        return {m_blocks[same_table[static_cast<size_t>(rng.uniform_index(same_table.size()))]], false};
    }
    auto pick = sample_index(rng, [&](size_t i) {
        return m_blocks[i].table_id != positive.table_id && !contains_answer(i, needle);
    });
    if (!pick) {
        throw Error(ErrorKind::Exhausted, "no answer-free block available as a negative for '" +
                                              positive.block_id + "'");
    }
    return {m_blocks[*pick], true};
}

NegativeResult NegativeSampler::mmhn(const TableTextBlock& positive, std::string_view answer, Rng& rng,
                                     size_t counter) const
{
    auto needle = normalize_text(answer);
    auto location = locate_answer(positive, answer);
    const std::string synthetic_id = positive.block_id + "#neg" + std::to_string(counter);

    if (location == AnswerLocation::InTable) {
        const std::string own = normalize_text(flatten_table_segment(positive));
        std::vector<size_t> rows;
        for (size_t i : m_blocks.table_blocks(positive.table_id)) {
            const auto& candidate = m_blocks[i];
            if (candidate.row_index == positive.row_index) {
                continue;
            }
            TableTextBlock swapped = positive;
            swapped.row = candidate.row;
            auto region = normalize_text(flatten_table_segment(swapped));
            if (region != own && !contains_normalized(region, needle)) {
                rows.push_back(i);
            }
        }
        if (!rows.empty()) {
            const auto& chosen = m_blocks[rows[static_cast<size_t>(rng.uniform_index(rows.size()))]];
            TableTextBlock neg = positive;
            neg.block_id = synthetic_id;
            neg.row_index = chosen.row_index;
            neg.row = chosen.row;
            return {std::move(neg), false};
        }
    } else if (location == AnswerLocation::InPassages) {
        const std::string own = normalize_text(flatten_passage_segment(positive));
        auto pick = sample_index(rng, [&](size_t i) {
            return !m_blocks[i].passages.empty() && m_blocks[i].block_id != positive.block_id &&
                   m_passage_regions[i] != own && !contains_normalized(m_passage_regions[i], needle);
        });
        if (pick) {
            TableTextBlock neg = positive;
            neg.block_id = synthetic_id;
            neg.passages = m_blocks[*pick].passages;
            return {std::move(neg), false};
        }
    }
    auto fallback = random(positive, answer, rng);
    fallback.fallback = true;
    return fallback;
}

TableTextBlock NegativeSampler::bm25(std::string_view question, std::string_view answer,
                                     std::string_view gold_table_id) const
{
    if (m_bm25 == nullptr || m_bm25->size() == 0) {
        throw Error(ErrorKind::EmptyInput, "BM25 negatives need a non-empty index");
    }
    auto needle = normalize_text(answer);
    auto ranked = m_bm25->search(question, m_bm25->size());
    for (const auto& hit : ranked) {
        const TableTextBlock* b = m_blocks.find(hit.id);
        if (b == nullptr) {
            throw Error(ErrorKind::DanglingTable, "BM25 index names unknown block '" + hit.id + "'");
        }
        size_t i = static_cast<size_t>(b - m_blocks.blocks().data());
        if (b->table_id != gold_table_id && !contains_answer(i, needle)) {
            return *b;
        }
    }
    throw Error(ErrorKind::Exhausted, "every BM25 match is gold-table or contains the answer");
}

const TableTextBlock* positive_block(const Question& q, const BlockCorpus& blocks)
{
    if (q.gold_row_index) {
        return blocks.find(make_block_id(q.gold_table_id, *q.gold_row_index));
    }
    for (size_t i : blocks.table_blocks(q.gold_table_id)) {
        if (locate_answer(blocks[i], q.answer) != AnswerLocation::Absent) {
            return &blocks[i];
        }
    }
    return nullptr;
}

std::vector<TrainInstance> make_instances(std::span<const Question> questions, const NegativeSampler& sampler,
                                          NegativeStrategy strategy, uint64_t seed, InstanceReport* report,
                                          size_t threads)
{
    std::vector<std::optional<TrainInstance>> slots(questions.size());
    parallel_for(questions.size(), threads, [&](size_t qi) {
        const auto& q = questions[qi];
        const TableTextBlock* pos = positive_block(q, sampler.blocks());
        if (pos == nullptr) {
            return;
        }
        Rng rng = Rng::derive(seed, q.question_id);
        TrainInstance inst;
        inst.question_id = q.question_id;
        inst.question = q.text;
        inst.positive_block_id = pos->block_id;
        inst.strategy = strategy;
        switch (strategy) {
        case NegativeStrategy::Mmhn: {
            auto r = locate_answer(*pos, q.answer) == AnswerLocation::Absent
                         ? NegativeResult{sampler.random(*pos, q.answer, rng).block, true}
                         : sampler.mmhn(*pos, q.answer, rng, qi);
            inst.hard_negative = std::move(r.block);
            inst.fallback = r.fallback;
            break;
        }
        case NegativeStrategy::Random: {
            auto r = sampler.random(*pos, q.answer, rng);
            inst.hard_negative = std::move(r.block);
            inst.fallback = r.fallback;
            break;
        }
        case NegativeStrategy::Bm25:
            try {
                inst.hard_negative = sampler.bm25(q.text, q.answer, q.gold_table_id);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::Exhausted) {
                    throw;
                }
                inst.hard_negative = sampler.random(*pos, q.answer, rng).block;
                inst.fallback = true;
            }
            break;
        }
        slots[qi] = std::move(inst);
    });
    std::vector<TrainInstance> out;
    InstanceReport rep;
    for (auto& s : slots) {
        if (!s) {
            ++rep.skipped_no_positive;
            continue;
        }
        rep.fallbacks += s->fallback ? 1 : 0;
        out.push_back(std::move(*s));
    }
    rep.built = out.size();
    if (report != nullptr) {
        *report = rep;
    }
    return out;
}

json to_json(const TrainInstance& inst)
{
    return json{{"question_id", inst.question_id},
                {"question", inst.question},
                {"positive_block_id", inst.positive_block_id},
                {"hard_negative_block", to_json(inst.hard_negative)},
                {"strategy", std::string(to_string(inst.strategy))},
                {"fallback", inst.fallback}};
}

TrainInstance instance_from_json(const json& r, size_t line)
{
    TrainInstance inst;
    inst.question_id = field<std::string>(r, "question_id", line);
    inst.question = field<std::string>(r, "question", line);
    inst.positive_block_id = field<std::string>(r, "positive_block_id", line);
    inst.hard_negative = block_from_json(field<json>(r, "hard_negative_block", line), line);
    try {
        inst.strategy = parse_negative_strategy(field<std::string>(r, "strategy", line));
    } catch (const Error&) {
        throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": unknown strategy");
    }
    inst.fallback = field<bool>(r, "fallback", line);
    return inst;
}

std::vector<TrainInstance> load_instances(const std::filesystem::path& path)
{
    std::vector<TrainInstance> out;
    for_each_jsonl(path, [&](const json& r, size_t line) { out.push_back(instance_from_json(r, line)); });
    return out;
}

void save_instances(std::span<const TrainInstance> instances, const std::filesystem::path& path)
{
    std::vector<json> records;
    records.reserve(instances.size());
    for (const auto& i : instances) {
        records.push_back(to_json(i));
    }
    write_jsonl(path, records);
}

}  // namespace tabtext
