#include "tabtext/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "tabtext/error.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

bool ranks_before(const ScoredId& a, const ScoredId& b)
{
    if (a.score != b.score) {
        return a.score > b.score;
    }
    return a.id < b.id;
}

namespace {

std::vector<std::string> terms_of(std::string_view text, const Tokenizer& tokenizer)
{
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

}  // namespace

Bm25Index Bm25Index::build(std::span<const FlattenedBlock> blocks, const Tokenizer& tokenizer, Bm25Params params)
{
    if (params.k1 < 0.0 || params.b < 0.0 || params.b > 1.0) {
        throw Error(ErrorKind::InvalidArgument, "BM25 requires k1 >= 0 and b in [0, 1]");
    }
    Bm25Index index;
    index.m_params = params;
    index.m_tokenizer = std::string(tokenizer.name());
    std::vector<size_t> order(blocks.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return blocks[a].block_id < blocks[b].block_id; });
    uint64_t total = 0;
    for (size_t doc = 0; doc < order.size(); ++doc) {
        const auto& block = blocks[order[doc]];
        if (doc > 0 && index.m_ids.back() == block.block_id) {
            throw Error(ErrorKind::DuplicateId, "block_id '" + block.block_id + "' appears twice");
        }
        index.m_ids.push_back(block.block_id);
        auto terms = terms_of(block.text, tokenizer);
        std::map<std::string, uint32_t> tf;
        for (auto& t : terms) {
            ++tf[t];
        }
        for (const auto& [term, count] : tf) {
            index.m_postings[term].push_back(Posting{static_cast<uint32_t>(doc), count});
        }
        index.m_lengths.push_back(static_cast<uint32_t>(terms.size()));
        total += terms.size();
    }
    index.m_average_length = index.m_ids.empty() ? 0.0 : static_cast<double>(total) / index.m_ids.size();
    return index;
}

std::vector<std::string> Bm25Index::query_terms(std::string_view text) const
{
    auto tokenizer = make_tokenizer(m_tokenizer.empty() ? "whitespace" : m_tokenizer);
    return terms_of(text, *tokenizer);
}

double Bm25Index::idf(const std::string& term) const
{
    auto it = m_postings.find(term);
    double df = it == m_postings.end() ? 0.0 : static_cast<double>(it->second.size());
    double n = static_cast<double>(m_ids.size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::unordered_map<uint32_t, double> Bm25Index::score_matching(std::string_view query) const
{
    std::unordered_map<uint32_t, double> scores;
    if (m_ids.empty()) {
        return scores;
    }
    const double k1 = m_params.k1;
    const double b = m_params.b;
    for (const auto& term : query_terms(query)) {
        auto it = m_postings.find(term);
        if (it == m_postings.end()) {
            continue;
        }
        double w = idf(term);
        for (const auto& p : it->second) {
            double tf = p.tf;
            double norm = k1 * (1.0 - b + b * m_lengths[p.doc] / m_average_length);
            scores[p.doc] += w * tf * (k1 + 1.0) / (tf + norm);
        }
    }
    return scores;
}

std::vector<ScoredId> Bm25Index::search(std::string_view query, size_t k) const
{
    auto scores = score_matching(query);
    std::vector<std::pair<uint32_t, double>> hits(scores.begin(), scores.end());
    auto before = [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;  // doc order is id order
    };
    size_t take = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), before);
    std::vector<ScoredId> out;
    out.reserve(take);
    for (size_t i = 0; i < take; ++i) {
        out.push_back(ScoredId{m_ids[hits[i].first], hits[i].second});
    }
    return out;
}

json Bm25Index::to_json() const
{
    json postings = json::object();
    for (const auto& [term, list] : m_postings) {
        json arr = json::array();
        for (const auto& p : list) {
            arr.push_back({p.doc, p.tf});
        }
        postings[term] = std::move(arr);
    }
    return json{{"k1", m_params.k1},   {"b", m_params.b},         {"tokenizer", m_tokenizer},
                {"ids", m_ids},        {"lengths", m_lengths},    {"postings", postings}};
}

Bm25Index Bm25Index::from_json(const json& value)
{
    Bm25Index index;
    try {
        index.m_params.k1 = value.at("k1").get<double>();
        index.m_params.b = value.at("b").get<double>();
        index.m_tokenizer = value.at("tokenizer").get<std::string>();
        index.m_ids = value.at("ids").get<std::vector<std::string>>();
        index.m_lengths = value.at("lengths").get<std::vector<uint32_t>>();
        for (const auto& [term, arr] : value.at("postings").items()) {
            auto& list = index.m_postings[term];
            for (const auto& p : arr) {
                list.push_back(Posting{p.at(0).get<uint32_t>(), p.at(1).get<uint32_t>()});
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Format, std::string("BM25 index: ") + e.what());
    }
    if (index.m_lengths.size() != index.m_ids.size()) {
        throw Error(ErrorKind::Format, "BM25 index: lengths and ids differ in size");
    }
    uint64_t total = std::accumulate(index.m_lengths.begin(), index.m_lengths.end(), uint64_t{0});
    index.m_average_length = index.m_ids.empty() ? 0.0 : static_cast<double>(total) / index.m_ids.size();
    return index;
}

void Bm25Index::save(const std::filesystem::path& path) const
{
    auto out = open_output(path);
    out << dump_canonical(to_json()) << '\n';
}

Bm25Index Bm25Index::load(const std::filesystem::path& path)
{
    auto in = open_input(path);
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Format, path.string() + ": " + e.what());
    }
}

}  // namespace tabtext
