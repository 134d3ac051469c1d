#include "tabtext/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "tabtext/error.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

std::string make_block_id(std::string_view table_id, size_t row_index)
{
    return std::string(table_id) + "-" + std::to_string(row_index);
}

std::vector<TableTextBlock> build_table_blocks(const Corpus& corpus, const Table& table)
{
    std::vector<TableTextBlock> out;
    out.reserve(table.rows.size());
    const auto& links = corpus.links();
    for (size_t r = 0; r < table.rows.size(); ++r) {
        TableTextBlock b;
        b.block_id = make_block_id(table.table_id, r);
        b.table_id = table.table_id;
        b.row_index = r;
        b.title = table.title;
        b.section_title = table.section_title;
        b.header = table.header;
        b.row = table.rows[r];
        std::unordered_set<std::string> seen;
        auto it = links.lower_bound(CellRef{table.table_id, r, 0});
        for (; it != links.end() && it->first.table_id == table.table_id && it->first.row_index == r; ++it) {
            for (const auto& pid : it->second) {
                if (!seen.insert(pid).second) {
                    continue;
                }
                const Passage* p = corpus.find_passage(pid);
                b.passages.push_back(LinkedPassage{p->passage_id, p->title, p->text, it->first.cell_index});
            }
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<TableTextBlock> build_blocks(const Corpus& corpus)
{
    std::vector<TableTextBlock> out;
    for (const auto& t : corpus.tables()) {
        auto blocks = build_table_blocks(corpus, t);
        std::move(blocks.begin(), blocks.end(), std::back_inserter(out));
    }
    return out;
}

namespace {

void append_piece(std::string& out, std::string_view piece)
{
    if (piece.empty()) {
        return;
    }
    if (!out.empty()) {
        out.push_back(' ');
    }
    out.append(piece);
}

}  // namespace

std::string flatten_table_segment(const TableTextBlock& block)
{
    std::string out;
    append_piece(out, kTabMarker);
    append_piece(out, kTitleMarker);
    append_piece(out, collapse_whitespace(block.title));
    append_piece(out, kSecTitleMarker);
    append_piece(out, collapse_whitespace(block.section_title));
    append_piece(out, kDataMarker);
    for (size_t c = 0; c < block.header.size(); ++c) {
        append_piece(out, collapse_whitespace(block.header[c]));
        append_piece(out, "is");
        std::string value = c < block.row.size() ? collapse_whitespace(block.row[c]) : std::string();
        append_piece(out, value + ".");
    }
    return out;
}

std::string flatten_passage_segment(const TableTextBlock& block)
{
    std::string out;
    for (size_t i = 0; i < block.passages.size(); ++i) {
        if (i > 0) {
            append_piece(out, kSepMarker);
        }
        append_piece(out, collapse_whitespace(block.passages[i].text));
    }
    return out;
}

FlattenedBlock flatten(const TableTextBlock& block, const Tokenizer& tokenizer)
{
    FlattenedBlock flat;
    flat.block_id = block.block_id;
    flat.table_id = block.table_id;
    flat.text = flatten_table_segment(block);
    append_piece(flat.text, kPsgMarker);
    append_piece(flat.text, flatten_passage_segment(block));

    auto tokens = tokenizer.tokenize(flat.text);
    auto psg = std::find_if(tokens.begin(), tokens.end(), [](const Token& t) { return t.text == kPsgMarker; });
    size_t psg_pos = static_cast<size_t>(psg - tokens.begin());
    flat.token_count = tokens.size();
    flat.table_span = TokenRange{1, psg_pos};
    flat.text_span = TokenRange{psg_pos + 1, tokens.size()};
    return flat;
}

FlattenedBlock truncate(const FlattenedBlock& flat, size_t budget, const Tokenizer& tokenizer)
{
    size_t segment_tokens = flat.table_span.end + 1;
    if (budget < segment_tokens) {
        throw Error(ErrorKind::BudgetTooSmall, "block '" + flat.block_id + "' needs " +
                                                   std::to_string(segment_tokens) +
                                                   " tokens for its table segment, budget is " +
                                                   std::to_string(budget));
    }
    if (flat.token_count <= budget) {
        return flat;
    }
    auto tokens = tokenizer.tokenize(flat.text);
    FlattenedBlock out = flat;
    out.text = flat.text.substr(0, tokens[budget - 1].end);
    out.token_count = budget;
    out.text_span.end = budget;
    return out;
}

// --- TF-IDF ----------------------------------------------------------------

std::vector<std::string> index_terms(std::string_view text)
{
    static const WhitespaceTokenizer tokenizer;
    std::vector<std::string> out;
    for (const auto& tok : tokenizer.tokenize(text)) {
        if (is_special_marker(tok.text)) {
            continue;
        }
        auto key = term_key(tok.text);
        if (!key.empty()) {
            out.push_back(std::move(key));
        }
    }
    return out;
}

TfidfModel::TfidfModel(std::span<const Passage> passages) : m_documents(passages.size())
{
    for (const auto& p : passages) {
        auto terms = index_terms(p.text);
        std::sort(terms.begin(), terms.end());
        terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
        for (auto& t : terms) {
            ++m_df[t];
        }
    }
}

double TfidfModel::idf(const std::string& term) const
{
    auto it = m_df.find(term);
    double df = it == m_df.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(m_documents)) / (1.0 + df)) + 1.0;
}

TfidfModel::SparseVector TfidfModel::vectorize(std::string_view text) const
{
    SparseVector v;
    for (auto& term : index_terms(text)) {
        v[term] += 1.0;
    }
    for (auto& [term, weight] : v) {
        weight *= idf(term);
    }
    return v;
}

double TfidfModel::cosine(const SparseVector& a, const SparseVector& b)
{
    const auto& small = a.size() <= b.size() ? a : b;
    const auto& large = a.size() <= b.size() ? b : a;
    double dot = 0.0;
    for (const auto& [term, w] : small) {
        auto it = large.find(term);
        if (it != large.end()) {
            dot += w * it->second;
        }
    }
    auto norm = [](const SparseVector& v) {
        double s = 0.0;
        for (const auto& [_, w] : v) {
            s += w * w;
        }
        return std::sqrt(s);
    };
    double denom = norm(a) * norm(b);
    return denom > 0.0 ? dot / denom : 0.0;
}

TableTextBlock rank_passages_tfidf(const TableTextBlock& block, const TfidfModel& model)
{
    std::string query = block.title + " " + block.section_title;
    for (const auto& h : block.header) {
        query += " " + h;
    }
    for (const auto& c : block.row) {
        query += " " + c;
    }
    auto qv = model.vectorize(query);
    std::vector<double> scores;
    scores.reserve(block.passages.size());
    for (const auto& p : block.passages) {
        scores.push_back(TfidfModel::cosine(qv, model.vectorize(p.text)));
    }
    std::vector<size_t> order(block.passages.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return block.passages[a].passage_id < block.passages[b].passage_id;
    });
    TableTextBlock out = block;
    for (size_t i = 0; i < order.size(); ++i) {
        out.passages[i] = block.passages[order[i]];
    }
    return out;
}

// --- BlockCorpus -----------------------------------------------------------

BlockCorpus::BlockCorpus(std::vector<TableTextBlock> blocks) : m_blocks(std::move(blocks))
{
    for (size_t i = 0; i < m_blocks.size(); ++i) {
        if (!m_by_id.emplace(m_blocks[i].block_id, i).second) {
            throw Error(ErrorKind::DuplicateId, "block_id '" + m_blocks[i].block_id + "' appears twice");
        }
        m_by_table[m_blocks[i].table_id].push_back(i);
    }
    for (auto& [_, rows] : m_by_table) {
        std::stable_sort(rows.begin(), rows.end(),
                         [&](size_t a, size_t b) { return m_blocks[a].row_index < m_blocks[b].row_index; });
    }
}

const TableTextBlock* BlockCorpus::find(std::string_view block_id) const
{
    auto it = m_by_id.find(std::string(block_id));
    return it == m_by_id.end() ? nullptr : &m_blocks[it->second];
}

std::span<const size_t> BlockCorpus::table_blocks(std::string_view table_id) const
{
    auto it = m_by_table.find(std::string(table_id));
    if (it == m_by_table.end()) {
        return {};
    }
    return it->second;
}

// --- JSON ------------------------------------------------------------------

json to_json(const TableTextBlock& b)
{
    json passages = json::array();
    for (const auto& p : b.passages) {
        passages.push_back(json{{"passage_id", p.passage_id},
                                {"title", p.title},
                                {"text", p.text},
                                {"cell_index", p.cell_index}});
    }
    return json{{"block_id", b.block_id},       {"table_id", b.table_id}, {"row_index", b.row_index},
                {"title", b.title},             {"section_title", b.section_title},
                {"header", b.header},           {"row", b.row},           {"passages", passages}};
}

json to_json(const FlattenedBlock& f)
{
    return json{{"block_id", f.block_id},
                {"table_id", f.table_id},
                {"text", f.text},
                {"table_span", {f.table_span.begin, f.table_span.end}},
                {"text_span", {f.text_span.begin, f.text_span.end}},
                {"token_count", f.token_count}};
}

TableTextBlock block_from_json(const json& r, size_t line)
{
    TableTextBlock b;
    b.block_id = field<std::string>(r, "block_id", line);
    b.table_id = field<std::string>(r, "table_id", line);
    b.row_index = field<size_t>(r, "row_index", line);
    b.title = field<std::string>(r, "title", line);
    b.section_title = field<std::string>(r, "section_title", line);
    b.header = field<std::vector<std::string>>(r, "header", line);
    b.row = field<std::vector<std::string>>(r, "row", line);
    if (b.row.size() != b.header.size()) {
        throw Error(ErrorKind::RowLengthMismatch, "block '" + b.block_id + "' row and header differ in length");
    }
    auto passages = field<json>(r, "passages", line);
    if (!passages.is_array()) {
        throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": passages must be an array");
    }
    for (const auto& p : passages) {
        b.passages.push_back(LinkedPassage{field<std::string>(p, "passage_id", line),
                                           field<std::string>(p, "title", line),
                                           field<std::string>(p, "text", line),
                                           field<size_t>(p, "cell_index", line)});
    }
    auto check = [&](std::string_view text) {
        if (find_special_marker(text) != std::string_view::npos) {
            throw Error(ErrorKind::ReservedMarker, "block '" + b.block_id + "' contains a reserved marker");
        }
    };
    check(b.title);
    check(b.section_title);
    for (const auto& s : b.header) check(s);
    for (const auto& s : b.row) check(s);
    for (const auto& p : b.passages) check(p.text);
    return b;
}

FlattenedBlock flat_block_from_json(const json& r, size_t line)
{
    FlattenedBlock f;
    f.block_id = field<std::string>(r, "block_id", line);
    f.table_id = field<std::string>(r, "table_id", line);
    f.text = field<std::string>(r, "text", line);
    auto ts = field<std::vector<size_t>>(r, "table_span", line);
    auto xs = field<std::vector<size_t>>(r, "text_span", line);
    if (ts.size() != 2 || xs.size() != 2 || ts[0] > ts[1] || xs[0] > xs[1] || ts[1] >= xs[0]) {
        throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": invalid spans");
    }
    f.table_span = TokenRange{ts[0], ts[1]};
    f.text_span = TokenRange{xs[0], xs[1]};
    f.token_count = field<size_t>(r, "token_count", line);
    return f;
}

std::vector<TableTextBlock> load_blocks(const std::filesystem::path& path)
{
    std::vector<TableTextBlock> out;
    for_each_jsonl(path, [&](const json& r, size_t line) { out.push_back(block_from_json(r, line)); });
    return out;
}

std::vector<FlattenedBlock> load_flat_blocks(const std::filesystem::path& path)
{
    std::vector<FlattenedBlock> out;
    for_each_jsonl(path, [&](const json& r, size_t line) { out.push_back(flat_block_from_json(r, line)); });
    return out;
}

void save_blocks(std::span<const TableTextBlock> blocks, const std::filesystem::path& path)
{
    std::vector<json> records;
    records.reserve(blocks.size());
    for (const auto& b : blocks) {
        records.push_back(to_json(b));
    }
    write_jsonl(path, records);
}

void save_flat_blocks(std::span<const FlattenedBlock> blocks, const std::filesystem::path& path)
{
    std::vector<json> records;
    records.reserve(blocks.size());
    for (const auto& b : blocks) {
        records.push_back(to_json(b));
    }
    write_jsonl(path, records);
}

}  // namespace tabtext
