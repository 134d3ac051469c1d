#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tabtext/blocks.hpp"
#include "tabtext/bm25.hpp"
#include "tabtext/corpus.hpp"
#include "tabtext/tokenizer.hpp"

namespace tabtext {

inline constexpr size_t kHitTokenBudget = 4096;

struct RankedList {
    std::string question_id;
    std::vector<ScoredId> ranked;
};

struct RetrievalRun {
    std::string retriever;
    std::vector<RankedList> lists;
};

/// Throws MalformedRecord on duplicate ids or ranks out of (score desc, id asc)
/// order.
void validate_ranked_list(const RankedList& list);

/// run.jsonl: {question_id, ranked_ids, scores, retriever} per line.
void save_run(const RetrievalRun& run, const std::filesystem::path& path);
RetrievalRun load_run(const std::filesystem::path& path);

/// Flattened blocks by id plus the tokenizer used for budgets.
class EvalContext {
  public:
    EvalContext(std::span<const FlattenedBlock> blocks, const Tokenizer& tokenizer);

    const FlattenedBlock& block(std::string_view id) const;
    bool has_table(std::string_view table_id) const;
    const Tokenizer& tokenizer() const { return m_tokenizer; }
    /// normalize_text of a block's flattened text, cached.
    const std::string& normalized(std::string_view id) const;

  private:
    std::vector<FlattenedBlock> m_blocks;
    std::vector<std::string> m_normalized;
    std::unordered_map<std::string, size_t> m_index;
    std::unordered_map<std::string, size_t> m_table_blocks;
    const Tokenizer& m_tokenizer;
};

/// Rank-based outcome of one question: the 0-based first rank at which the
/// table / block condition holds (npos when never).
struct QuestionOutcome {
    std::string question_id;
    size_t first_table_rank = std::string::npos;
    size_t first_block_rank = std::string::npos;
    bool hit_at_budget = false;
};

QuestionOutcome evaluate_question(const RankedList& list, const Question& question, const EvalContext& context,
                                  size_t budget = kHitTokenBudget);

/// Concatenation of flattened texts in rank order, cut after `budget` tokens.
std::string budget_prefix(const RankedList& list, const EvalContext& context, size_t budget);

struct EvalReport {
    std::string retriever;
    std::string tokenizer;
    std::vector<size_t> ks;
    std::vector<double> table_recall;
    std::vector<double> block_recall;
    size_t budget = kHitTokenBudget;
    double hit_at_budget = 0.0;
    size_t evaluated = 0;
    size_t excluded_no_blocks = 0;
    std::vector<QuestionOutcome> per_question;
};

/// Questions whose gold table has no block are excluded and counted. Every
/// other question must appear in the run and carry an answer.
EvalReport evaluate(const RetrievalRun& run, std::span<const Question> questions, const EvalContext& context,
                    std::span<const size_t> ks, size_t budget = kHitTokenBudget, size_t threads = 1);

std::vector<double> table_recall(const RetrievalRun& run, std::span<const Question> questions,
                                 const EvalContext& context, std::span<const size_t> ks);
std::vector<double> block_recall(const RetrievalRun& run, std::span<const Question> questions,
                                 const EvalContext& context, std::span<const size_t> ks);
double hit_at_budget(const RetrievalRun& run, std::span<const Question> questions, const EvalContext& context,
                     size_t budget = kHitTokenBudget);

struct CurvePoint {
    size_t k = 0;
    double table_recall = 0.0;
    double block_recall = 0.0;
};

std::vector<CurvePoint> sweep(const RetrievalRun& run, std::span<const Question> questions,
                              const EvalContext& context, std::span<const size_t> ks);

json to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& path);
void write_curve(std::span<const CurvePoint> curve, const std::filesystem::path& path);

/// Parses "1,10,20"; values must be positive.
std::vector<size_t> parse_ks(std::string_view text);

}  // namespace tabtext
