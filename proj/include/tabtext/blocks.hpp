#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tabtext/corpus.hpp"
#include "tabtext/tokenizer.hpp"

namespace tabtext {

inline constexpr size_t kBlockTokenBudget = 512;
inline constexpr size_t kQuestionTokenBudget = 70;

struct LinkedPassage {
    std::string passage_id;
    std::string title;
    std::string text;
    size_t cell_index = 0;  // cell of the row the link came from

    bool operator==(const LinkedPassage&) const = default;
};

/// One table row with its titles and the passages linked from its cells.
struct TableTextBlock {
    std::string block_id;
    std::string table_id;
    size_t row_index = 0;
    std::string title;
    std::string section_title;
    std::vector<std::string> header;
    std::vector<std::string> row;
    std::vector<LinkedPassage> passages;

    bool operator==(const TableTextBlock&) const = default;
};

/// Half-open token range.
struct TokenRange {
    size_t begin = 0;
    size_t end = 0;

    size_t size() const { return end - begin; }
    bool empty() const { return begin == end; }
    bool operator==(const TokenRange&) const = default;
};

struct FlattenedBlock {
    std::string block_id;
    std::string table_id;
    std::string text;
    TokenRange table_span;  // tokens after [TAB], up to [PSG]
    TokenRange text_span;   // tokens after [PSG]
    size_t token_count = 0;

    bool operator==(const FlattenedBlock&) const = default;
};

std::string make_block_id(std::string_view table_id, size_t row_index);

/// Exactly one block per row of every table. A row's passages are the ones
/// linked from its own cells, in cell order then link order, first
/// occurrence kept when a passage is linked twice.
std::vector<TableTextBlock> build_blocks(const Corpus& corpus);
std::vector<TableTextBlock> build_table_blocks(const Corpus& corpus, const Table& table);

/// "[TAB] [TITLE] .. [SECTITLE] .. [DATA] col is val. col is val."
std::string flatten_table_segment(const TableTextBlock& block);
/// Passage texts joined by " [SEP] ", whitespace-normalized.
std::string flatten_passage_segment(const TableTextBlock& block);

FlattenedBlock flatten(const TableTextBlock& block, const Tokenizer& tokenizer);

/// Cuts tokens from the tail of the passage region so that at most `budget`
/// tokens remain. The table segment, including the [PSG] marker, is never
/// cut; a budget smaller than that raises BudgetTooSmall.
FlattenedBlock truncate(const FlattenedBlock& flat, size_t budget, const Tokenizer& tokenizer);

/// Smoothed TF-IDF over the passage corpus: idf = ln((1 + N) / (1 + df)) + 1,
/// raw term counts, cosine similarity.
class TfidfModel {
  public:
    using SparseVector = std::unordered_map<std::string, double>;

    explicit TfidfModel(std::span<const Passage> passages);

    double idf(const std::string& term) const;
    SparseVector vectorize(std::string_view text) const;
    static double cosine(const SparseVector& a, const SparseVector& b);

    size_t document_count() const { return m_documents; }

  private:
    std::unordered_map<std::string, size_t> m_df;
    size_t m_documents = 0;
};

/// Terms of a text as used by the TF-IDF model and BM25 (term_key of each
/// whitespace token, empty keys and markers dropped).
std::vector<std::string> index_terms(std::string_view text);

/// Reorders passages by descending cosine between the passage text and the
/// block's schema/content (header, row cells, titles); ties by passage_id.
TableTextBlock rank_passages_tfidf(const TableTextBlock& block, const TfidfModel& model);

/// Immutable id-indexed collection of blocks with a per-table row index.
class BlockCorpus {
  public:
    BlockCorpus() = default;
    explicit BlockCorpus(std::vector<TableTextBlock> blocks);

    std::span<const TableTextBlock> blocks() const { return m_blocks; }
    size_t size() const { return m_blocks.size(); }
    const TableTextBlock& operator[](size_t i) const { return m_blocks[i]; }

    const TableTextBlock* find(std::string_view block_id) const;
    /// Block indices of one table ordered by row; empty for unknown tables.
    std::span<const size_t> table_blocks(std::string_view table_id) const;

  private:
    std::vector<TableTextBlock> m_blocks;
    std::unordered_map<std::string, size_t> m_by_id;
    std::unordered_map<std::string, std::vector<size_t>> m_by_table;
};

json to_json(const TableTextBlock& block);
json to_json(const FlattenedBlock& flat);
TableTextBlock block_from_json(const json& record, size_t line);
FlattenedBlock flat_block_from_json(const json& record, size_t line);

std::vector<TableTextBlock> load_blocks(const std::filesystem::path& path);
std::vector<FlattenedBlock> load_flat_blocks(const std::filesystem::path& path);
void save_blocks(std::span<const TableTextBlock> blocks, const std::filesystem::path& path);
void save_flat_blocks(std::span<const FlattenedBlock> blocks, const std::filesystem::path& path);

}  // namespace tabtext
