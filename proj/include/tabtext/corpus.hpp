#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "tabtext/jsonl.hpp"

namespace tabtext {

struct Table {
    std::string table_id;
    std::string title;
    std::string section_title;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct Passage {
    std::string passage_id;
    std::string title;
    std::string text;
};

struct CellRef {
    std::string table_id;
    size_t row_index = 0;
    size_t cell_index = 0;

    auto operator<=>(const CellRef&) const = default;
};

/// Entity links from table cells to passages, produced by an external linker.
/// Passage order per cell is the linker's order and is preserved.
using LinkMap = std::map<CellRef, std::vector<std::string>>;

enum class Split { Train, Dev, Test };

struct Question {
    std::string question_id;
    std::string text;
    std::string answer;
    std::string gold_table_id;
    std::optional<size_t> gold_row_index;
    Split split = Split::Train;
};

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

/// Tables, passages and links validated against each other. Immutable once
/// constructed; lookups are safe from any number of readers.
class Corpus {
  public:
    Corpus() = default;

    /// Validates every invariant and throws a classified Error on the first
    /// violation.
    Corpus(std::vector<Table> tables, std::vector<Passage> passages, LinkMap links);

    std::span<const Table> tables() const { return m_tables; }
    std::span<const Passage> passages() const { return m_passages; }
    const LinkMap& links() const { return m_links; }

    const Table* find_table(std::string_view table_id) const;
    const Passage* find_passage(std::string_view passage_id) const;

  private:
    std::vector<Table> m_tables;
    std::vector<Passage> m_passages;
    LinkMap m_links;
    std::unordered_map<std::string, size_t> m_table_index;
    std::unordered_map<std::string, size_t> m_passage_index;
};

// Record <-> JSON. Field names follow the on-disk schema.
json to_json(const Table& table);
json to_json(const Passage& passage);
json to_json(const Question& question);
std::vector<json> links_to_json(const LinkMap& links);

Table table_from_json(const json& record, size_t line);
Passage passage_from_json(const json& record, size_t line);
Question question_from_json(const json& record, size_t line);

std::vector<Table> load_tables(const std::filesystem::path& path);
std::vector<Passage> load_passages(const std::filesystem::path& path);
LinkMap load_links(const std::filesystem::path& path);

Corpus load_corpus(const std::filesystem::path& tables_path,
                   const std::filesystem::path& passages_path,
                   const std::filesystem::path& links_path);

/// Loads questions and checks them against the table corpus: ids unique,
/// gold table resolves, gold row in range, answer present for train/dev.
std::vector<Question> load_questions(const std::filesystem::path& path, const Corpus& corpus);
void validate_question(const Question& question, const Corpus& corpus);

void save_corpus(const Corpus& corpus,
                 const std::filesystem::path& tables_path,
                 const std::filesystem::path& passages_path,
                 const std::filesystem::path& links_path);
void save_questions(std::span<const Question> questions, const std::filesystem::path& path);

struct CorpusStats {
    size_t table_count = 0;
    size_t passage_count = 0;
    size_t block_count = 0;
    double mean_tokens_per_block = 0.0;
    double mean_blocks_per_table = 0.0;
};

/// Ratio num/den rounded half-up to one decimal using integer arithmetic.
double round_ratio_1dp(uint64_t numerator, uint64_t denominator);

/// `block_token_counts` holds the token count of every built block (empty
/// when blocks have not been built).
CorpusStats corpus_stats(const Corpus& corpus, std::span<const size_t> block_token_counts);

json to_json(const CorpusStats& stats);

}  // namespace tabtext
