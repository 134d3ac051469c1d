#include "tabtext/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

#include "tabtext/error.hpp"
#include "tabtext/parallel.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

void validate_ranked_list(const RankedList& list)
{
    std::unordered_set<std::string_view> seen;
    for (size_t i = 0; i < list.ranked.size(); ++i) {
        if (!seen.insert(list.ranked[i].id).second) {
            throw Error(ErrorKind::MalformedRecord,
                        "question '" + list.question_id + "' ranks '" + list.ranked[i].id + "' twice");
        }
        if (i > 0 && !ranks_before(list.ranked[i - 1], list.ranked[i])) {
            throw Error(ErrorKind::MalformedRecord, "question '" + list.question_id + "' is not ordered at rank " +
                                                        std::to_string(i + 1));
        }
    }
}

void save_run(const RetrievalRun& run, const std::filesystem::path& path)
{
    std::vector<json> records;
    records.reserve(run.lists.size());
    for (const auto& l : run.lists) {
        json ids = json::array();
        json scores = json::array();
        for (const auto& s : l.ranked) {
            ids.push_back(s.id);
            scores.push_back(s.score);
        }
        records.push_back(json{{"question_id", l.question_id},
                               {"ranked_ids", std::move(ids)},
                               {"scores", std::move(scores)},
                               {"retriever", run.retriever}});
    }
    write_jsonl(path, records);
}

RetrievalRun load_run(const std::filesystem::path& path)
{
    RetrievalRun run;
    std::unordered_set<std::string> questions;
    for_each_jsonl(path, [&](const json& r, size_t line) {
        RankedList l;
        l.question_id = field<std::string>(r, "question_id", line);
        auto ids = field<std::vector<std::string>>(r, "ranked_ids", line);
        auto scores = field<std::vector<double>>(r, "scores", line);
        auto retriever = field<std::string>(r, "retriever", line);
        if (ids.size() != scores.size()) {
            throw Error(ErrorKind::MalformedRecord,
                        "line " + std::to_string(line) + ": ranked_ids and scores differ in length");
        }
        if (line == 1 || run.retriever.empty()) {
            run.retriever = retriever;
        } else if (retriever != run.retriever) {
            throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": mixed retrievers");
        }
        if (!questions.insert(l.question_id).second) {
            throw Error(ErrorKind::DuplicateId, "line " + std::to_string(line) + ": question '" + l.question_id +
                                                    "' appears twice");
        }
        for (size_t i = 0; i < ids.size(); ++i) {
            l.ranked.push_back(ScoredId{ids[i], scores[i]});
        }
        try {
            validate_ranked_list(l);
        } catch (const Error& e) {
            throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": " + e.what());
        }
        run.lists.push_back(std::move(l));
    });
    return run;
}

EvalContext::EvalContext(std::span<const FlattenedBlock> blocks, const Tokenizer& tokenizer)
    : m_blocks(blocks.begin(), blocks.end()), m_tokenizer(tokenizer)
{
    m_normalized.reserve(m_blocks.size());
    for (size_t i = 0; i < m_blocks.size(); ++i) {
        if (!m_index.emplace(m_blocks[i].block_id, i).second) {
            throw Error(ErrorKind::DuplicateId, "block '" + m_blocks[i].block_id + "' appears twice");
        }
        ++m_table_blocks[m_blocks[i].table_id];
        m_normalized.push_back(normalize_text(m_blocks[i].text));
    }
}

const FlattenedBlock& EvalContext::block(std::string_view id) const
{
    auto it = m_index.find(std::string(id));
    if (it == m_index.end()) {
        throw Error(ErrorKind::DanglingTable, "ranked id '" + std::string(id) + "' is not a known block");
    }
    return m_blocks[it->second];
}

const std::string& EvalContext::normalized(std::string_view id) const
{
    block(id);
    return m_normalized[m_index.find(std::string(id))->second];
}

bool EvalContext::has_table(std::string_view table_id) const
{
    return m_table_blocks.count(std::string(table_id)) != 0;
}

std::string budget_prefix(const RankedList& list, const EvalContext& context, size_t budget)
{
    std::string out;
    size_t used = 0;
    for (const auto& s : list.ranked) {
        if (used >= budget) {
            break;
        }
        const std::string& text = context.block(s.id).text;
        auto tokens = context.tokenizer().tokenize(text);
        if (tokens.empty()) {
            continue;
        }
        size_t take = std::min(tokens.size(), budget - used);
        if (!out.empty()) {
            out.push_back(' ');
        }
        out.append(text, 0, tokens[take - 1].end);
        used += take;
    }
    return out;
}

QuestionOutcome evaluate_question(const RankedList& list, const Question& question, const EvalContext& context,
                                  size_t budget)
{
    std::string answer = normalize_text(question.answer);
    if (answer.empty()) {
        throw Error(ErrorKind::MissingAnswer, "question '" + question.question_id + "' has no answer");
    }
    QuestionOutcome out;
    out.question_id = question.question_id;
    for (size_t r = 0; r < list.ranked.size(); ++r) {
        const auto& b = context.block(list.ranked[r].id);
        if (b.table_id != question.gold_table_id) {
            continue;
        }
        if (out.first_table_rank == std::string::npos) {
            out.first_table_rank = r;
        }
        if (contains_normalized(context.normalized(b.block_id), answer)) {
            out.first_block_rank = r;
            break;
        }
    }
    out.hit_at_budget = contains_normalized(normalize_text(budget_prefix(list, context, budget)), answer);
    return out;
}

EvalReport evaluate(const RetrievalRun& run, std::span<const Question> questions, const EvalContext& context,
                    std::span<const size_t> ks, size_t budget, size_t threads)
{
    std::unordered_map<std::string, const RankedList*> by_question;
    for (const auto& l : run.lists) {
        by_question.emplace(l.question_id, &l);
    }
    std::vector<const Question*> kept;
    std::vector<const RankedList*> lists;
    EvalReport report;
    report.retriever = run.retriever;
    report.tokenizer = std::string(context.tokenizer().name());
    report.ks.assign(ks.begin(), ks.end());
    report.budget = budget;
    for (const auto& q : questions) {
        if (!context.has_table(q.gold_table_id)) {
            ++report.excluded_no_blocks;
            continue;
        }
        auto it = by_question.find(q.question_id);
        if (it == by_question.end()) {
            throw Error(ErrorKind::InvalidArgument, "run has no ranking for question '" + q.question_id + "'");
        }
        kept.push_back(&q);
        lists.push_back(it->second);
    }
    report.per_question.resize(kept.size());
    parallel_for(kept.size(), threads, [&](size_t i) {
        report.per_question[i] = evaluate_question(*lists[i], *kept[i], context, budget);
    });
    report.evaluated = kept.size();
    const double n = static_cast<double>(kept.size());
    for (size_t k : ks) {
        size_t t = 0, b = 0;
        for (const auto& o : report.per_question) {
            t += o.first_table_rank < k ? 1 : 0;
            b += o.first_block_rank < k ? 1 : 0;
        }
        report.table_recall.push_back(kept.empty() ? 0.0 : static_cast<double>(t) / n);
        report.block_recall.push_back(kept.empty() ? 0.0 : static_cast<double>(b) / n);
    }
    size_t hits = 0;
    for (const auto& o : report.per_question) {
        hits += o.hit_at_budget ? 1 : 0;
    }
    report.hit_at_budget = kept.empty() ? 0.0 : static_cast<double>(hits) / n;
    return report;
}

std::vector<double> table_recall(const RetrievalRun& run, std::span<const Question> questions,
                                 const EvalContext& context, std::span<const size_t> ks)
{
    return evaluate(run, questions, context, ks).table_recall;
}

std::vector<double> block_recall(const RetrievalRun& run, std::span<const Question> questions,
                                 const EvalContext& context, std::span<const size_t> ks)
{
    return evaluate(run, questions, context, ks).block_recall;
}

double hit_at_budget(const RetrievalRun& run, std::span<const Question> questions, const EvalContext& context,
                     size_t budget)
{
    return evaluate(run, questions, context, {}, budget).hit_at_budget;
}

std::vector<CurvePoint> sweep(const RetrievalRun& run, std::span<const Question> questions,
                              const EvalContext& context, std::span<const size_t> ks)
{
    auto report = evaluate(run, questions, context, ks);
    std::vector<CurvePoint> out;
    for (size_t i = 0; i < ks.size(); ++i) {
        out.push_back(CurvePoint{ks[i], report.table_recall[i], report.block_recall[i]});
    }
    return out;
}

json to_json(const EvalReport& r)
{
    json table = json::object();
    json block = json::object();
    for (size_t i = 0; i < r.ks.size(); ++i) {
        table[std::to_string(r.ks[i])] = r.table_recall[i];
        block[std::to_string(r.ks[i])] = r.block_recall[i];
    }
    json per = json::array();
    for (const auto& o : r.per_question) {
        auto rank = [](size_t v) { return v == std::string::npos ? json(nullptr) : json(v + 1); };
        per.push_back(json{{"question_id", o.question_id},
                           {"first_table_rank", rank(o.first_table_rank)},
                           {"first_block_rank", rank(o.first_block_rank)},
                           {"hit_at_budget", o.hit_at_budget}});
    }
    return json{{"retriever", r.retriever},
                {"tokenizer", r.tokenizer},
                {"ks", r.ks},
                {"table_recall", std::move(table)},
                {"block_recall", std::move(block)},
                {"budget", r.budget},
                {"hit_at_budget", r.hit_at_budget},
                {"evaluated", r.evaluated},
                {"excluded_no_blocks", r.excluded_no_blocks},
                {"per_question", std::move(per)}};
}

void write_report(const EvalReport& report, const std::filesystem::path& path)
{
    auto out = open_output(path);
    out << to_json(report).dump(2) << '\n';
}

void write_curve(std::span<const CurvePoint> curve, const std::filesystem::path& path)
{
    auto out = open_output(path);
    out << "k,table_recall,block_recall\n";
    char buf[96];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", p.k, p.table_recall, p.block_recall);
        out << buf;
    }
}

std::vector<size_t> parse_ks(std::string_view text)
{
    std::vector<size_t> out;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        std::string piece(text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos));
        size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(piece, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != piece.size() || v == 0 || piece.front() == '-') {
            throw Error(ErrorKind::InvalidArgument, "bad k value '" + piece + "'");
        }
        out.push_back(static_cast<size_t>(v));
        if (comma == std::string_view::npos) {
            break;
        }
        pos = comma + 1;
    }
    return out;
}

}  // namespace tabtext
