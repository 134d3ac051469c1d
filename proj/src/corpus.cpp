#include "tabtext/corpus.hpp"

#include "tabtext/error.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

std::string_view to_string(Split split)
{
    switch (split) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name)
{
    if (name == "train") return Split::Train;
    if (name == "dev") return Split::Dev;
    if (name == "test") return Split::Test;
    throw Error(ErrorKind::MalformedRecord, "unknown split '" + std::string(name) + "'");
}

namespace {

void check_no_marker(std::string_view text, const std::string& where)
{
    size_t pos = find_special_marker(text);
    if (pos != std::string_view::npos) {
        throw Error(ErrorKind::ReservedMarker, where + " contains a reserved marker at byte " +
                                                   std::to_string(pos));
    }
}

void validate_table(const Table& t)
{
    const std::string where = "table '" + t.table_id + "'";
    if (t.header.empty()) {
        throw Error(ErrorKind::EmptyHeader, where + " has no columns");
    }
    for (size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r].size() != t.header.size()) {
            throw Error(ErrorKind::RowLengthMismatch,
                        where + " row " + std::to_string(r) + " has " +
                            std::to_string(t.rows[r].size()) + " cells, header has " +
                            std::to_string(t.header.size()));
        }
    }
    check_no_marker(t.title, where + " title");
    check_no_marker(t.section_title, where + " section title");
    for (const auto& h : t.header) {
        check_no_marker(h, where + " header");
    }
    for (const auto& row : t.rows) {
        for (const auto& cell : row) {
            check_no_marker(cell, where + " cell");
        }
    }
}

void validate_passage(const Passage& p)
{
    if (collapse_whitespace(p.text).empty()) {
        throw Error(ErrorKind::EmptyPassage, "passage '" + p.passage_id + "' has empty text");
    }
    check_no_marker(p.title, "passage '" + p.passage_id + "' title");
    check_no_marker(p.text, "passage '" + p.passage_id + "' text");
}

}  // namespace

Corpus::Corpus(std::vector<Table> tables, std::vector<Passage> passages, LinkMap links)
    : m_tables(std::move(tables)), m_passages(std::move(passages)), m_links(std::move(links))
{
    for (size_t i = 0; i < m_tables.size(); ++i) {
        const auto& t = m_tables[i];
        if (!m_table_index.emplace(t.table_id, i).second) {
            throw Error(ErrorKind::DuplicateId, "table_id '" + t.table_id + "' appears twice");
        }
        validate_table(t);
    }
    for (size_t i = 0; i < m_passages.size(); ++i) {
        const auto& p = m_passages[i];
        if (!m_passage_index.emplace(p.passage_id, i).second) {
            throw Error(ErrorKind::DuplicateId, "passage_id '" + p.passage_id + "' appears twice");
        }
        validate_passage(p);
    }
    for (const auto& [cell, ids] : m_links) {
        const Table* table = find_table(cell.table_id);
        if (table == nullptr) {
            throw Error(ErrorKind::DanglingTable, "link references unknown table '" + cell.table_id + "'");
        }
        if (cell.row_index >= table->rows.size() || cell.cell_index >= table->header.size()) {
            throw Error(ErrorKind::IndexOutOfRange,
                        "link (" + cell.table_id + ", " + std::to_string(cell.row_index) + ", " +
                            std::to_string(cell.cell_index) + ") is outside the table");
        }
        for (const auto& pid : ids) {
            if (find_passage(pid) == nullptr) {
                throw Error(ErrorKind::DanglingPassage, "link from table '" + cell.table_id +
                                                            "' names missing passage_id '" + pid + "'");
            }
        }
    }
}

const Table* Corpus::find_table(std::string_view table_id) const
{
    auto it = m_table_index.find(std::string(table_id));
    return it == m_table_index.end() ? nullptr : &m_tables[it->second];
}

const Passage* Corpus::find_passage(std::string_view passage_id) const
{
    auto it = m_passage_index.find(std::string(passage_id));
    return it == m_passage_index.end() ? nullptr : &m_passages[it->second];
}

// --- JSON ------------------------------------------------------------------

json to_json(const Table& t)
{
    return json{{"table_id", t.table_id},
                {"title", t.title},
                {"section_title", t.section_title},
                {"header", t.header},
                {"rows", t.rows}};
}

json to_json(const Passage& p)
{
    return json{{"passage_id", p.passage_id}, {"title", p.title}, {"text", p.text}};
}

json to_json(const Question& q)
{
    json j{{"question_id", q.question_id},
           {"text", q.text},
           {"answer", q.answer},
           {"gold_table_id", q.gold_table_id},
           {"split", std::string(to_string(q.split))}};
    if (q.gold_row_index) {
        j["gold_row_index"] = *q.gold_row_index;
    }
    return j;
}

std::vector<json> links_to_json(const LinkMap& links)
{
    std::vector<json> out;
    out.reserve(links.size());
    for (const auto& [cell, ids] : links) {
        out.push_back(json{{"table_id", cell.table_id},
                           {"row_index", cell.row_index},
                           {"cell_index", cell.cell_index},
                           {"passage_ids", ids}});
    }
    return out;
}

Table table_from_json(const json& r, size_t line)
{
    Table t;
    t.table_id = field<std::string>(r, "table_id", line);
    t.title = field<std::string>(r, "title", line);
    t.section_title = field<std::string>(r, "section_title", line);
    t.header = field<std::vector<std::string>>(r, "header", line);
    t.rows = field<std::vector<std::vector<std::string>>>(r, "rows", line);
    return t;
}

Passage passage_from_json(const json& r, size_t line)
{
    return Passage{field<std::string>(r, "passage_id", line), field<std::string>(r, "title", line),
                   field<std::string>(r, "text", line)};
}

Question question_from_json(const json& r, size_t line)
{
    Question q;
    q.question_id = field<std::string>(r, "question_id", line);
    q.text = field<std::string>(r, "text", line);
    q.answer = field<std::string>(r, "answer", line);
    q.gold_table_id = field<std::string>(r, "gold_table_id", line);
    auto it = r.find("gold_row_index");
    if (it != r.end() && !it->is_null()) {
        if (!it->is_number_unsigned()) {
            throw Error(ErrorKind::MalformedRecord,
                        "line " + std::to_string(line) + ": gold_row_index must be a non-negative integer");
        }
        q.gold_row_index = it->get<size_t>();
    }
    try {
        q.split = parse_split(field<std::string>(r, "split", line));
    } catch (const Error& e) {
        throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": unknown split");
    }
    return q;
}

std::vector<Table> load_tables(const std::filesystem::path& path)
{
    std::vector<Table> out;
    for_each_jsonl(path, [&](const json& r, size_t line) { out.push_back(table_from_json(r, line)); });
    return out;
}

std::vector<Passage> load_passages(const std::filesystem::path& path)
{
    std::vector<Passage> out;
    for_each_jsonl(path, [&](const json& r, size_t line) { out.push_back(passage_from_json(r, line)); });
    return out;
}

LinkMap load_links(const std::filesystem::path& path)
{
    LinkMap links;
    for_each_jsonl(path, [&](const json& r, size_t line) {
        CellRef cell{field<std::string>(r, "table_id", line), field<size_t>(r, "row_index", line),
                     field<size_t>(r, "cell_index", line)};
        auto ids = field<std::vector<std::string>>(r, "passage_ids", line);
        if (!links.emplace(std::move(cell), std::move(ids)).second) {
            throw Error(ErrorKind::DuplicateId,
                        path.filename().string() + " line " + std::to_string(line) + ": cell linked twice");
        }
    });
    return links;
}

Corpus load_corpus(const std::filesystem::path& tables_path,
                   const std::filesystem::path& passages_path,
                   const std::filesystem::path& links_path)
{
    return Corpus(load_tables(tables_path), load_passages(passages_path), load_links(links_path));
}

void validate_question(const Question& q, const Corpus& corpus)
{
    const Table* table = corpus.find_table(q.gold_table_id);
    if (table == nullptr) {
        throw Error(ErrorKind::DanglingTable,
                    "question '" + q.question_id + "' names unknown table '" + q.gold_table_id + "'");
    }
    if (q.gold_row_index && *q.gold_row_index >= table->rows.size()) {
        throw Error(ErrorKind::IndexOutOfRange, "question '" + q.question_id + "' gold row is outside the table");
    }
    if (q.split != Split::Test && collapse_whitespace(q.answer).empty()) {
        throw Error(ErrorKind::MissingAnswer, "question '" + q.question_id + "' has no answer");
    }
}

std::vector<Question> load_questions(const std::filesystem::path& path, const Corpus& corpus)
{
    std::vector<Question> out;
    std::unordered_map<std::string, size_t> seen;
    for_each_jsonl(path, [&](const json& r, size_t line) {
        Question q = question_from_json(r, line);
        if (!seen.emplace(q.question_id, line).second) {
            throw Error(ErrorKind::DuplicateId, "question_id '" + q.question_id + "' appears twice");
        }
        validate_question(q, corpus);
        out.push_back(std::move(q));
    });
    return out;
}

void save_corpus(const Corpus& corpus,
                 const std::filesystem::path& tables_path,
                 const std::filesystem::path& passages_path,
                 const std::filesystem::path& links_path)
{
    std::vector<json> records;
    for (const auto& t : corpus.tables()) {
        records.push_back(to_json(t));
    }
    write_jsonl(tables_path, records);
    records.clear();
    for (const auto& p : corpus.passages()) {
        records.push_back(to_json(p));
    }
    write_jsonl(passages_path, records);
    write_jsonl(links_path, links_to_json(corpus.links()));
}

void save_questions(std::span<const Question> questions, const std::filesystem::path& path)
{
    std::vector<json> records;
    records.reserve(questions.size());
    for (const auto& q : questions) {
        records.push_back(to_json(q));
    }
    write_jsonl(path, records);
}

// --- stats -----------------------------------------------------------------

double round_ratio_1dp(uint64_t numerator, uint64_t denominator)
{
    if (denominator == 0) {
        return 0.0;
    }
    // round(10 * num / den) with ties away from zero
    uint64_t tenths = (20 * numerator + denominator) / (2 * denominator);
    return static_cast<double>(tenths) / 10.0;
}

CorpusStats corpus_stats(const Corpus& corpus, std::span<const size_t> block_token_counts)
{
    CorpusStats s;
    s.table_count = corpus.tables().size();
    s.passage_count = corpus.passages().size();
    s.block_count = block_token_counts.size();
    uint64_t total_tokens = 0;
    for (auto n : block_token_counts) {
        total_tokens += n;
    }
    s.mean_tokens_per_block = round_ratio_1dp(total_tokens, s.block_count);
    s.mean_blocks_per_table = round_ratio_1dp(s.block_count, s.table_count);
    return s;
}

json to_json(const CorpusStats& s)
{
    return json{{"table_count", s.table_count},
                {"passage_count", s.passage_count},
                {"block_count", s.block_count},
                {"mean_tokens_per_block", s.mean_tokens_per_block},
                {"mean_blocks_per_table", s.mean_blocks_per_table}};
}

}  // namespace tabtext
