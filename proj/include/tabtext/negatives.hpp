#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tabtext/blocks.hpp"
#include "tabtext/bm25.hpp"
#include "tabtext/corpus.hpp"
#include "tabtext/rng.hpp"

namespace tabtext {

enum class AnswerLocation { InTable, InPassages, Both, Absent };
enum class NegativeStrategy { Mmhn, Bm25, Random };

std::string_view to_string(AnswerLocation location);
std::string_view to_string(NegativeStrategy strategy);
NegativeStrategy parse_negative_strategy(std::string_view name);

/// Normalized containment tested separately on the flattened table segment
/// and on the passage segment.
AnswerLocation locate_answer(const TableTextBlock& block, std::string_view answer);

struct NegativeResult {
    TableTextBlock block;
    bool fallback = false;  // produced by the random fallback, not the requested rule
};

struct TrainInstance {
    std::string question_id;
    std::string question;
    std::string positive_block_id;
    TableTextBlock hard_negative;
    NegativeStrategy strategy = NegativeStrategy::Mmhn;
    bool fallback = false;
};

/// Hard-negative construction over an immutable block corpus. Caches the
/// normalized table/passage regions of every block.
class NegativeSampler {
  public:
    explicit NegativeSampler(const BlockCorpus& blocks, const Bm25Index* bm25 = nullptr);

    /// Mixed-modality negative. Answer in the row: same passages, another row
    /// of the same table without the answer. Answer in the passages: same
    /// row, passages of another block without the answer. Answers in both
    /// regions, or no eligible substitute, fall back to random_negative().
    /// Synthetic negatives are named positive_id + "#neg" + counter.
    NegativeResult mmhn(const TableTextBlock& positive, std::string_view answer, Rng& rng, size_t counter) const;

    /// Uniform over other blocks of the same table without the answer; when
    /// there are none, uniform over answer-free blocks of other tables
    /// (flagged as fallback).
    NegativeResult random(const TableTextBlock& positive, std::string_view answer, Rng& rng) const;

    /// Highest-BM25 block outside the gold table whose text lacks the answer.
    TableTextBlock bm25(std::string_view question, std::string_view answer, std::string_view gold_table_id) const;

    bool contains_answer(size_t block_index, std::string_view normalized_answer) const;
    const BlockCorpus& blocks() const { return m_blocks; }

  private:
    std::optional<size_t> sample_index(Rng& rng, const std::function<bool(size_t)>& eligible) const;

    const BlockCorpus& m_blocks;
    const Bm25Index* m_bm25;
    std::vector<std::string> m_table_regions;
    std::vector<std::string> m_passage_regions;
};

/// Gold block of a question: the gold row when given, otherwise the first
/// row of the gold table whose block contains the answer.
const TableTextBlock* positive_block(const Question& question, const BlockCorpus& blocks);

struct InstanceReport {
    size_t built = 0;
    size_t skipped_no_positive = 0;
    size_t fallbacks = 0;
};

/// One instance per question, seeded per question id. `counter` ids of
/// synthetic negatives are the question's position in `questions`.
std::vector<TrainInstance> make_instances(std::span<const Question> questions, const NegativeSampler& sampler,
                                          NegativeStrategy strategy, uint64_t seed, InstanceReport* report = nullptr,
                                          size_t threads = 1);

json to_json(const TrainInstance& instance);
TrainInstance instance_from_json(const json& record, size_t line);
std::vector<TrainInstance> load_instances(const std::filesystem::path& path);
void save_instances(std::span<const TrainInstance> instances, const std::filesystem::path& path);

}  // namespace tabtext
