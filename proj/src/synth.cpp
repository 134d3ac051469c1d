#include "tabtext/synth.hpp"

#include <algorithm>
#include <cctype>

#include "tabtext/error.hpp"
#include "tabtext/parallel.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

std::string_view to_string(Provenance provenance)
{
    return provenance == Provenance::TitleQ ? "titleq" : "generated";
}

Provenance parse_provenance(std::string_view name)
{
    if (name == "titleq") return Provenance::TitleQ;
    if (name == "generated") return Provenance::Generated;
    throw Error(ErrorKind::InvalidArgument, "unknown provenance '" + std::string(name) + "'");
}

namespace {

bool is_blank(std::string_view line)
{
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string_view trim(std::string_view s)
{
    auto space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && space(s.front())) s.remove_prefix(1);
    while (!s.empty() && space(s.back())) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string first_section(std::string_view text)
{
    text = trim(text);
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            break;
        }
        size_t next = text.find('\n', nl + 1);
        std::string_view line = text.substr(nl + 1, next == std::string_view::npos ? text.npos : next - nl - 1);
        if (next != std::string_view::npos && is_blank(line)) {
            return std::string(trim(text.substr(0, nl)));
        }
        pos = nl + 1;
    }
    return std::string(text);
}

std::vector<TableTextBlock> mine_blocks(const Corpus& corpus, size_t threads)
{
    auto tables = corpus.tables();
    std::vector<std::vector<TableTextBlock>> per_table(tables.size());
    parallel_for(tables.size(), threads, [&](size_t t) {
        for (auto& b : build_table_blocks(corpus, tables[t])) {
            if (b.passages.empty()) {
                continue;
            }
            for (auto& p : b.passages) {
                p.text = first_section(p.text);
            }
            per_table[t].push_back(std::move(b));
        }
    });
    std::vector<TableTextBlock> out;
    for (auto& v : per_table) {
        std::move(v.begin(), v.end(), std::back_inserter(out));
    }
    return out;
}

std::optional<PseudoPair> titleq(const TableTextBlock& block, Rng& rng)
{
    if (block.passages.empty()) {
        return std::nullopt;
    }
    const LinkedPassage& p = block.passages[rng.uniform_index(block.passages.size())];
    std::vector<size_t> columns;
    for (size_t c = 0; c < block.row.size() && c < block.header.size(); ++c) {
        if (c != p.cell_index && !trim(block.row[c]).empty() && !trim(block.header[c]).empty()) {
            columns.push_back(c);
        }
    }
    if (columns.empty()) {
        return std::nullopt;
    }
    size_t c = columns[rng.uniform_index(columns.size())];
    PseudoPair pair;
    pair.block_id = block.block_id;
    pair.provenance = Provenance::TitleQ;
    pair.question = "What is the " + collapse_whitespace(block.header[c]) + " of " + collapse_whitespace(p.title) +
                    " in " + collapse_whitespace(block.title) + "?";
    pair.sources = {block.header[c], p.title, block.title};
    return pair;
}

std::vector<PseudoPair> titleq_all(std::span<const TableTextBlock> blocks, uint64_t seed, size_t* skipped)
{
    std::vector<PseudoPair> out;
    size_t skip = 0;
    for (const auto& b : blocks) {
        Rng rng = Rng::derive(seed, b.block_id);
        if (auto pair = titleq(b, rng)) {
            out.push_back(std::move(*pair));
        } else {
            ++skip;
        }
    }
    if (skipped != nullptr) {
        *skipped = skip;
    }
    return out;
}

bool references_block(const PseudoPair& pair, const TableTextBlock& block)
{
    std::string text = flatten_table_segment(block) + " " + flatten_passage_segment(block);
    auto block_terms = index_terms(text);
    std::sort(block_terms.begin(), block_terms.end());
    for (const auto& t : index_terms(pair.question)) {
        if (std::binary_search(block_terms.begin(), block_terms.end(), t)) {
            return true;
        }
    }
    return false;
}

std::vector<PseudoPair> import_generated(const std::filesystem::path& path, const BlockCorpus& blocks,
                                         ImportReport* report)
{
    std::vector<PseudoPair> out;
    ImportReport rep;
    size_t covered = 0;
    for_each_line(path, [&](const std::string& raw, size_t line) {
        json r;
        try {
            r = json::parse(raw);
        } catch (const json::exception&) {
            ++rep.rejected;
            return;
        }
        if (!r.is_object() || !r.contains("block_id") || !r["block_id"].is_string() || !r.contains("question") ||
            !r["question"].is_string()) {
            ++rep.rejected;
            return;
        }
        std::string question = collapse_whitespace(r["question"].get<std::string>());
        if (question.empty()) {
            ++rep.rejected;
            return;
        }
        std::string id = r["block_id"].get<std::string>();
        const TableTextBlock* block = blocks.find(id);
        if (block == nullptr) {
            throw Error(ErrorKind::DanglingTable, path.string() + ": line " + std::to_string(line) +
                                                      ": unknown block_id '" + id + "'");
        }
        PseudoPair pair{id, question, Provenance::Generated, {}};
        if (references_block(pair, *block)) {
            ++covered;
        }
        out.push_back(std::move(pair));
        ++rep.accepted;
    });
    rep.coverage = rep.accepted == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(rep.accepted);
    if (report != nullptr) {
        *report = rep;
    }
    return out;
}

std::vector<TrainInstance> pretrain_instances(std::span<const PseudoPair> pairs, const NegativeSampler& sampler,
                                              uint64_t seed)
{
    std::vector<TrainInstance> out;
    out.reserve(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        const TableTextBlock* pos = sampler.blocks().find(pairs[i].block_id);
        if (pos == nullptr) {
            throw Error(ErrorKind::DanglingTable, "pair names unknown block '" + pairs[i].block_id + "'");
        }
        TrainInstance inst;
        inst.question_id = "pt-" + std::to_string(i);
        inst.question = pairs[i].question;
        inst.positive_block_id = pos->block_id;
        inst.strategy = NegativeStrategy::Random;
        Rng rng = Rng::derive(seed, inst.question_id);
        auto neg = sampler.random(*pos, "", rng);
        inst.hard_negative = std::move(neg.block);
        inst.fallback = neg.fallback;
        out.push_back(std::move(inst));
    }
    return out;
}

json to_json(const PseudoPair& pair)
{
    return json{{"block_id", pair.block_id},
                {"question", pair.question},
                {"provenance", std::string(to_string(pair.provenance))},
                {"sources", pair.sources}};
}

PseudoPair pseudo_pair_from_json(const json& r, size_t line)
{
    PseudoPair p;
    p.block_id = field<std::string>(r, "block_id", line);
    p.question = field<std::string>(r, "question", line);
    if (p.question.empty()) {
        throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": empty question");
    }
    try {
        p.provenance = parse_provenance(field<std::string>(r, "provenance", line));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::MalformedRecord) throw;
        throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": unknown provenance");
    }
    if (r.contains("sources")) {
        p.sources = field<std::vector<std::string>>(r, "sources", line);
    }
    return p;
}

std::vector<PseudoPair> load_pseudo_pairs(const std::filesystem::path& path)
{
    std::vector<PseudoPair> out;
    for_each_jsonl(path, [&](const json& r, size_t line) { out.push_back(pseudo_pair_from_json(r, line)); });
    return out;
}

void save_pseudo_pairs(std::span<const PseudoPair> pairs, const std::filesystem::path& path)
{
    std::vector<json> records;
    records.reserve(pairs.size());
    for (const auto& p : pairs) {
        records.push_back(to_json(p));
    }
    write_jsonl(path, records);
}

}  // namespace tabtext
