#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tabtext/blocks.hpp"
#include "tabtext/corpus.hpp"
#include "tabtext/encoder.hpp"
#include "tabtext/rng.hpp"

namespace tabtext::fixtures {

class TempDir {
  public:
    TempDir()
    {
        static int counter = 0;
        auto base = std::filesystem::temp_directory_path();
        std::mt19937_64 gen(std::random_device{}());
        m_path = base / ("tabtext-" + std::to_string(gen()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(m_path);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(m_path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return m_path; }
    std::filesystem::path operator/(const std::string& name) const { return m_path / name; }

  private:
    std::filesystem::path m_path;
};

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    out << content;
}

// J1 League row used as the flattening fixture.
inline TableTextBlock j1_league_block()
{
    TableTextBlock b;
    b.block_id = "J1_League_1-0";
    b.table_id = "J1_League_1";
    b.row_index = 0;
    b.title = "J1 League";
    b.section_title = "History -- Timeline";
    b.header = {"Year", "Important events", "# J clubs", "Rele . slots"};
    b.row = {"2003", "Extra time", "16", "2"};
    b.passages = {LinkedPassage{"/wiki/2003_J.League_Division_1", "2003 J.League Division 1",
                                "The 2003 season was the 11th season since the establishment of the J.League . "
                                "The league began on March 15 and ended on November 29 .",
                                0}};
    return b;
}

inline Corpus j1_league_corpus()
{
    auto b = j1_league_block();
    Table t{b.table_id, b.title, b.section_title, b.header, {b.row}};
    Passage p{b.passages[0].passage_id, b.passages[0].title, b.passages[0].text};
    LinkMap links{{CellRef{b.table_id, 0, 0}, {p.passage_id}}};
    return Corpus({t}, {p}, links);
}

/// Small random corpus: `tables` tables of 1..max_rows rows, some linked
/// passages per row, shared vocabulary so texts overlap.
struct RandomCorpusSpec {
    size_t tables = 5;
    size_t max_rows = 4;
    size_t max_cols = 4;
    size_t passages = 12;
    size_t max_links_per_cell = 2;
    double link_probability = 0.4;
    size_t words = 40;
};

inline std::string random_phrase(Rng& rng, size_t words, size_t min_len, size_t max_len)
{
    size_t n = min_len + rng.uniform_index(max_len - min_len + 1);
    std::string out;
    for (size_t i = 0; i < n; ++i) {
        if (!out.empty()) out += ' ';
        out += "w" + std::to_string(rng.uniform_index(words));
    }
    return out;
}

inline Corpus random_corpus(uint64_t seed, const RandomCorpusSpec& spec = {})
{
    Rng rng(seed);
    std::vector<Passage> passages;
    for (size_t p = 0; p < spec.passages; ++p) {
        passages.push_back(Passage{"p" + std::to_string(p), "Title " + std::to_string(p),
                                   random_phrase(rng, spec.words, 3, 12)});
    }
    std::vector<Table> tables;
    LinkMap links;
    for (size_t t = 0; t < spec.tables; ++t) {
        Table table;
        table.table_id = "t" + std::to_string(t);
        table.title = "Table " + random_phrase(rng, spec.words, 1, 3);
        table.section_title = rng.uniform01() < 0.2 ? "" : random_phrase(rng, spec.words, 1, 2);
        size_t cols = 1 + rng.uniform_index(spec.max_cols);
        for (size_t c = 0; c < cols; ++c) {
            table.header.push_back("col" + std::to_string(c));
        }
        size_t rows = 1 + rng.uniform_index(spec.max_rows);
        for (size_t r = 0; r < rows; ++r) {
            std::vector<std::string> row;
            for (size_t c = 0; c < cols; ++c) {
                row.push_back(rng.uniform01() < 0.1 ? "" : random_phrase(rng, spec.words, 1, 2));
                if (!passages.empty() && rng.uniform01() < spec.link_probability) {
                    std::vector<std::string> ids;
                    size_t n = 1 + rng.uniform_index(spec.max_links_per_cell);
                    for (size_t k = 0; k < n; ++k) {
                        ids.push_back(passages[rng.uniform_index(passages.size())].passage_id);
                    }
                    links[CellRef{table.table_id, r, c}] = ids;
                }
            }
            table.rows.push_back(std::move(row));
        }
        tables.push_back(std::move(table));
    }
    return Corpus(std::move(tables), std::move(passages), std::move(links));
}

/// Corpus with planted cross-modal evidence. Every block carries unique
/// tokens: `row_evidence` in its row cells and `passage_evidence` in its one
/// linked passage. Questions quote half of each and are answered by an
/// unquoted evidence token of either modality.
struct PlantedCorpus {
    Corpus corpus;
    std::vector<Question> train;
    std::vector<Question> test;
};

struct PlantedSpec {
    size_t tables = 50;
    size_t rows = 10;
    size_t row_evidence = 4;
    size_t passage_evidence = 4;
    size_t quoted = 2;  // quoted tokens per modality
    size_t train_per_block = 2;
    size_t test_per_block = 1;
    size_t filler_words = 30;
};

inline std::string evidence_token(size_t n)
{
    char buf[16];
    std::snprintf(buf, sizeof(buf), "tok%05zu", n);
    return buf;
}

inline PlantedCorpus planted_corpus(uint64_t seed, const PlantedSpec& spec = {})
{
    Rng rng(seed);
    size_t next = 0;
    std::vector<Table> tables;
    std::vector<Passage> passages;
    LinkMap links;
    struct Evidence {
        std::string table_id;
        size_t row;
        std::vector<std::string> row_tokens, passage_tokens;
    };
    std::vector<Evidence> evidence;
    auto filler = [&](size_t n) {
        std::string out;
        for (size_t i = 0; i < n; ++i) {
            out += (out.empty() ? "" : " ") + std::string("f") + std::to_string(rng.uniform_index(spec.filler_words));
        }
        return out;
    };
    for (size_t t = 0; t < spec.tables; ++t) {
        Table table;
        table.table_id = "table" + std::to_string(t);
        table.title = "List " + std::to_string(t);
        table.section_title = "Section";
        table.header.push_back("name");
        for (size_t c = 0; c < spec.row_evidence; ++c) {
            table.header.push_back("attr" + std::to_string(c));
        }
        for (size_t r = 0; r < spec.rows; ++r) {
            Evidence ev{table.table_id, r, {}, {}};
            std::string entity = "entity" + std::to_string(t) + "x" + std::to_string(r);
            std::vector<std::string> row{entity};
            for (size_t c = 0; c < spec.row_evidence; ++c) {
                ev.row_tokens.push_back(evidence_token(next++));
                row.push_back(ev.row_tokens.back());
            }
            table.rows.push_back(row);
            std::string text = filler(3);
            for (size_t k = 0; k < spec.passage_evidence; ++k) {
                ev.passage_tokens.push_back(evidence_token(next++));
                text += " " + ev.passage_tokens.back() + " " + filler(2);
            }
            std::string pid = "psg-" + entity;
            passages.push_back(Passage{pid, entity, text});
            links[CellRef{table.table_id, r, 0}] = {pid};
            evidence.push_back(std::move(ev));
        }
        tables.push_back(std::move(table));
    }

    PlantedCorpus out{Corpus(std::move(tables), std::move(passages), std::move(links)), {}, {}};
    size_t qn = 0;
    auto make_question = [&](const Evidence& ev, Split split) {
        std::vector<std::string> rt = ev.row_tokens, pt = ev.passage_tokens;
        rng.shuffle(rt);
        rng.shuffle(pt);
        std::string text = "which " + filler(1);
        std::vector<std::string> quoted;
        for (size_t i = 0; i < spec.quoted; ++i) {
            quoted.push_back(rt[i]);
            quoted.push_back(pt[i]);
        }
        rng.shuffle(quoted);
        for (const auto& q : quoted) {
            text += " " + q;
        }
        text += " ?";
        bool in_row = rng.uniform_index(2) == 0;
        std::string answer = in_row ? rt[spec.quoted] : pt[spec.quoted];
        Question q;
        q.question_id = "q" + std::to_string(qn++);
        q.text = text;
        q.answer = answer;
        q.gold_table_id = ev.table_id;
        q.gold_row_index = ev.row;
        q.split = split;
        return q;
    };
    for (const auto& ev : evidence) {
        for (size_t i = 0; i < spec.train_per_block; ++i) {
            out.train.push_back(make_question(ev, Split::Train));
        }
        for (size_t i = 0; i < spec.test_per_block; ++i) {
            out.test.push_back(make_question(ev, Split::Dev));
        }
    }
    return out;
}

}  // namespace tabtext::fixtures
