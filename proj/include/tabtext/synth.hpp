#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tabtext/blocks.hpp"
#include "tabtext/corpus.hpp"
#include "tabtext/negatives.hpp"
#include "tabtext/rng.hpp"

namespace tabtext {

enum class Provenance { TitleQ, Generated };

std::string_view to_string(Provenance provenance);
Provenance parse_provenance(std::string_view name);

struct PseudoPair {
    std::string block_id;
    std::string question;
    Provenance provenance = Provenance::TitleQ;
    std::vector<std::string> sources;  // surface fields the question was built from

    bool operator==(const PseudoPair&) const = default;
};

/// Text up to the first blank line (a line holding only whitespace), or the
/// whole text when there is none. Trimmed.
std::string first_section(std::string_view text);

/// One block per row with at least one linked passage; passage texts are cut
/// to their first section.
std::vector<TableTextBlock> mine_blocks(const Corpus& corpus, size_t threads = 1);

/// "What is the {column} of {passage title} in {table title}?" with the
/// passage and the column drawn uniformly. The column's cell must be
/// non-empty and differ from the cell the passage is linked from. Returns
/// nullopt when no column qualifies.
std::optional<PseudoPair> titleq(const TableTextBlock& block, Rng& rng);

/// titleq over every block with a per-block stream derived from `seed`.
std::vector<PseudoPair> titleq_all(std::span<const TableTextBlock> blocks, uint64_t seed, size_t* skipped = nullptr);

struct ImportReport {
    size_t accepted = 0;
    size_t rejected = 0;
    double coverage = 0.0;  // fraction of questions sharing a surface term with their block
};

/// Reads questions_generated.jsonl ({block_id, question}). Malformed lines and
/// empty questions are counted and skipped; an unknown block_id throws.
std::vector<PseudoPair> import_generated(const std::filesystem::path& path, const BlockCorpus& blocks,
                                         ImportReport* report = nullptr);

/// True when some index term of the question also occurs in the block's
/// flattened text.
bool references_block(const PseudoPair& pair, const TableTextBlock& block);

/// Pretraining instances: each pair's block is the positive and a random
/// row of the same table the negative. Question ids are "pt-" + position.
std::vector<TrainInstance> pretrain_instances(std::span<const PseudoPair> pairs, const NegativeSampler& sampler,
                                              uint64_t seed);

json to_json(const PseudoPair& pair);
PseudoPair pseudo_pair_from_json(const json& record, size_t line);
std::vector<PseudoPair> load_pseudo_pairs(const std::filesystem::path& path);
void save_pseudo_pairs(std::span<const PseudoPair> pairs, const std::filesystem::path& path);

}  // namespace tabtext
