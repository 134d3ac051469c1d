#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tabtext/blocks.hpp"
#include "tabtext/jsonl.hpp"
#include "tabtext/tokenizer.hpp"

namespace tabtext {

struct ScoredId {
    std::string id;
    double score = 0.0;

    bool operator==(const ScoredId&) const = default;
};

/// (score desc, id asc)
bool ranks_before(const ScoredId& a, const ScoredId& b);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over flattened blocks. Terms are term_key()s of the tokenizer's
/// tokens with markers dropped. Per query token (duplicates count):
///   idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg_len))
/// with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
class Bm25Index {
  public:
    struct Posting {
        uint32_t doc = 0;
        uint32_t tf = 0;
    };

    Bm25Index() = default;

    /// Documents are stored sorted by block id, so postings are sorted by id.
    static Bm25Index build(std::span<const FlattenedBlock> blocks, const Tokenizer& tokenizer,
                           Bm25Params params = {});

    std::vector<std::string> query_terms(std::string_view text) const;

    /// Scores of every document that matches at least one query term.
    std::unordered_map<uint32_t, double> score_matching(std::string_view query) const;

    /// Top-k matching documents; empty for empty or out-of-vocabulary queries.
    std::vector<ScoredId> search(std::string_view query, size_t k) const;

    double idf(const std::string& term) const;
    size_t size() const { return m_ids.size(); }
    const std::vector<std::string>& ids() const { return m_ids; }
    const std::vector<uint32_t>& lengths() const { return m_lengths; }
    double average_length() const { return m_average_length; }
    const Bm25Params& params() const { return m_params; }
    std::string_view tokenizer_name() const { return m_tokenizer; }

    json to_json() const;
    static Bm25Index from_json(const json& value);
    void save(const std::filesystem::path& path) const;
    static Bm25Index load(const std::filesystem::path& path);

  private:
    std::vector<std::string> m_ids;
    std::vector<uint32_t> m_lengths;
    std::unordered_map<std::string, std::vector<Posting>> m_postings;
    double m_average_length = 0.0;
    Bm25Params m_params;
    std::string m_tokenizer;
};

}  // namespace tabtext
