#include "tabtext/dense_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "binary_io.hpp"
#include "tabtext/error.hpp"
#include "tabtext/parallel.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

uint64_t dense_checksum(const DenseIndex& index)
{
    uint64_t h = 0xcbf29ce484222325ULL;
    for (float f : index.data) {
        uint32_t bits = std::bit_cast<uint32_t>(f);
        std::byte bytes[4];
        for (int i = 0; i < 4; ++i) {
            bytes[i] = static_cast<std::byte>((bits >> (8 * i)) & 0xFF);
        }
        h = fnv1a64(std::span<const std::byte>(bytes, 4), h);
    }
    for (const auto& id : index.ids) {
        h = fnv1a64(id, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

DenseIndex make_dense_index(std::vector<std::string> ids, std::vector<float> data, uint32_t dim, Pooling strategy)
{
    if (dim == 0 && !ids.empty()) {
        throw Error(ErrorKind::DimensionMismatch, "index dimension must be positive");
    }
    if (data.size() != ids.size() * dim) {
        throw Error(ErrorKind::DimensionMismatch, "embedding matrix does not have one row per id");
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
        if (!seen.insert(id).second) {
            throw Error(ErrorKind::DuplicateId, "index id '" + id + "' appears twice");
        }
        if (id.find('\n') != std::string::npos) {
            throw Error(ErrorKind::InvalidArgument, "index ids cannot contain newlines");
        }
    }
    DenseIndex index{std::move(ids), std::move(data), dim, strategy, 0};
    index.checksum = dense_checksum(index);
    return index;
}

std::vector<float> to_float(const Eigen::VectorXd& v)
{
    std::vector<float> out(static_cast<size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out[static_cast<size_t>(i)] = static_cast<float>(v(i));
    }
    return out;
}

DenseIndex build_dense(std::span<const FlattenedBlock> blocks, const Checkpoint& checkpoint,
                       const Tokenizer& tokenizer, size_t threads)
{
    const uint32_t dim = static_cast<uint32_t>(3 * checkpoint.model.dim());
    std::vector<std::string> ids;
    ids.reserve(blocks.size());
    for (const auto& b : blocks) {
        ids.push_back(b.block_id);
    }
    std::vector<float> data(blocks.size() * dim);
    parallel_for(blocks.size(), threads, [&](size_t i) {
        auto input = block_input(blocks[i], tokenizer, checkpoint.vocab);
        auto emb = embed_block(checkpoint.model, input);
        for (uint32_t j = 0; j < dim; ++j) {
            data[i * dim + j] = static_cast<float>(emb.values(j));
        }
    });
    return make_dense_index(std::move(ids), std::move(data), dim, checkpoint.model.strategy);
}

void write_dense_index(const DenseIndex& index, const std::filesystem::path& bin_path,
                       const std::filesystem::path& ids_path)
{
    auto out = open_output(bin_path, true);
    detail::write_magic(out);
    detail::write_le<uint32_t>(out, kIndexVersion);
    detail::write_le<uint64_t>(out, index.size());
    detail::write_le<uint32_t>(out, index.dim);
    detail::write_le<uint8_t>(out, static_cast<uint8_t>(index.strategy));
    detail::write_le<uint64_t>(out, dense_checksum(index));
    for (float f : index.data) {
        detail::write_f32(out, f);
    }
    if (!out) {
        throw Error(ErrorKind::Io, "write failed for '" + bin_path.string() + "'");
    }
    auto ids = open_output(ids_path);
    for (const auto& id : index.ids) {
        ids << id << '\n';
    }
}

DenseIndex read_dense_index(const std::filesystem::path& bin_path, const std::filesystem::path& ids_path)
{
    auto in = open_input(bin_path, true);
    detail::expect_magic(in, bin_path.string());
    auto version = detail::read_le<uint32_t>(in);
    if (version != kIndexVersion) {
        throw Error(ErrorKind::Format, bin_path.string() + ": unsupported index version " + std::to_string(version));
    }
    auto n = detail::read_le<uint64_t>(in);
    auto dim = detail::read_le<uint32_t>(in);
    auto strategy = pooling_from_tag(detail::read_le<uint8_t>(in));
    auto checksum = detail::read_le<uint64_t>(in);
    if (dim == 0) {
        throw Error(ErrorKind::Format, bin_path.string() + ": zero dimension");
    }
    // 29 header bytes; the payload size must agree with n and dim.
    auto payload = std::filesystem::file_size(bin_path) - 29;
    if (n > payload / 4 / dim || n * dim * 4 != payload) {
        throw Error(ErrorKind::Format, bin_path.string() + ": payload size does not match " + std::to_string(n) +
                                           " x " + std::to_string(dim));
    }
    std::vector<float> data;
    data.reserve(n * dim);
    for (uint64_t i = 0; i < n * dim; ++i) {
        data.push_back(detail::read_f32(in));
    }
    std::vector<std::string> ids;
    auto id_in = open_input(ids_path);
    std::string line;
    while (std::getline(id_in, line)) {
        ids.push_back(line);
    }
    if (ids.size() != n) {
        throw Error(ErrorKind::Format, ids_path.string() + " has " + std::to_string(ids.size()) +
                                           " ids, index has " + std::to_string(n) + " rows");
    }
    auto index = make_dense_index(std::move(ids), std::move(data), dim, strategy);
    if (index.checksum != checksum) {
        throw Error(ErrorKind::Format, bin_path.string() + ": checksum mismatch");
    }
    return index;
}

float dense_score(std::span<const float> a, std::span<const float> b)
{
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return static_cast<float>(s);
}

namespace {

std::vector<ScoredId> top_k(const DenseIndex& index, std::span<const float> query, size_t k,
                            std::span<const uint32_t> candidates)
{
    std::vector<std::pair<float, uint32_t>> scored;
    scored.reserve(candidates.size());
    for (auto row : candidates) {
        scored.emplace_back(dense_score(query, index.row(row)), row);
    }
    auto before = [&](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return index.ids[a.second] < index.ids[b.second];
    };
    size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), before);
    std::vector<ScoredId> out;
    out.reserve(take);
    for (size_t i = 0; i < take; ++i) {
        out.push_back(ScoredId{index.ids[scored[i].second], scored[i].first});
    }
    return out;
}

void check_query(const DenseIndex& index, std::span<const float> query, size_t k)
{
    if (k == 0) {
        throw Error(ErrorKind::InvalidArgument, "k must be at least 1");
    }
    if (query.size() != index.dim) {
        throw Error(ErrorKind::DimensionMismatch, "query has dimension " + std::to_string(query.size()) +
                                                      ", index has " + std::to_string(index.dim));
    }
}

}  // namespace

std::vector<ScoredId> search_dense(const DenseIndex& index, std::span<const float> query, size_t k)
{
    check_query(index, query, k);
    std::vector<uint32_t> all(index.size());
    std::iota(all.begin(), all.end(), 0);
    return top_k(index, query, k, all);
}

// --- IVF -------------------------------------------------------------------

namespace {

double squared_distance(std::span<const float> a, std::span<const float> b)
{
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

IvfIndex IvfIndex::build(const DenseIndex& index, const IvfConfig& config)
{
    IvfIndex ivf;
    ivf.m_config = config;
    ivf.m_dim = index.dim;
    const size_t n = index.size();
    if (n == 0) {
        return ivf;
    }
    size_t lists = config.lists > 0 ? config.lists
                                     : static_cast<size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    lists = std::min(lists, n);
    const size_t dim = index.dim;

    Rng rng(config.seed);
    std::vector<uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    ivf.m_centroids.resize(lists * dim);
    for (size_t c = 0; c < lists; ++c) {
        auto src = index.row(perm[c]);
        std::copy(src.begin(), src.end(), ivf.m_centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
    }
    auto centroid = [&](size_t c) { return std::span<const float>(ivf.m_centroids.data() + c * dim, dim); };

    std::vector<uint32_t> assign(n, 0);
    for (size_t iter = 0; iter <= config.iterations; ++iter) {
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t c = 0; c < lists; ++c) {
                double dist = squared_distance(index.row(i), centroid(c));
                if (dist < best) {
                    best = dist;
                    assign[i] = static_cast<uint32_t>(c);
                }
            }
        }
        if (iter == config.iterations) {
            break;
        }
        std::vector<double> sums(lists * dim, 0.0);
        std::vector<size_t> counts(lists, 0);
        for (size_t i = 0; i < n; ++i) {
            auto row = index.row(i);
            ++counts[assign[i]];
            for (size_t j = 0; j < dim; ++j) {
                sums[assign[i] * dim + j] += row[j];
            }
        }
        for (size_t c = 0; c < lists; ++c) {
            if (counts[c] == 0) {
                continue;  // keep the previous centroid
            }
            for (size_t j = 0; j < dim; ++j) {
                ivf.m_centroids[c * dim + j] = static_cast<float>(sums[c * dim + j] / counts[c]);
            }
        }
    }
    ivf.m_lists.assign(lists, {});
    for (size_t i = 0; i < n; ++i) {
        ivf.m_lists[assign[i]].push_back(static_cast<uint32_t>(i));
    }

    // Self-test: perturbed copies of stored vectors as queries.
    std::vector<std::vector<float>> queries;
    for (size_t q = 0; q < config.self_test_queries; ++q) {
        auto src = index.row(static_cast<size_t>(rng.uniform_index(n)));
        std::vector<float> query(src.begin(), src.end());
        double norm = std::sqrt(static_cast<double>(dense_score(query, query)) / static_cast<double>(dim));
        for (auto& x : query) {
            x += static_cast<float>(rng.uniform(-0.1, 0.1) * norm);
        }
        queries.push_back(std::move(query));
    }
    size_t k = std::min(config.self_test_k, n);
    ivf.m_measured_recall = queries.empty() ? 1.0 : approximate_recall(ivf, index, queries, k);
    if (ivf.m_measured_recall < config.target_recall) {
        throw Error(ErrorKind::ApproximateRecall,
                    "self-test recall@" + std::to_string(k) + " = " + std::to_string(ivf.m_measured_recall) +
                        " with " + std::to_string(config.probes) + " probes over " + std::to_string(lists) +
                        " lists; target " + std::to_string(config.target_recall));
    }
    return ivf;
}

std::vector<ScoredId> IvfIndex::search(const DenseIndex& index, std::span<const float> query, size_t k,
                                       size_t probes) const
{
    check_query(index, query, k);
    if (m_lists.empty()) {
        return {};
    }
    const size_t dim = m_dim;
    std::vector<std::pair<double, size_t>> order;
    order.reserve(m_lists.size());
    for (size_t c = 0; c < m_lists.size(); ++c) {
        order.emplace_back(squared_distance(query, std::span<const float>(m_centroids.data() + c * dim, dim)), c);
    }
    probes = std::clamp<size_t>(probes, 1, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(probes), order.end());
    std::vector<uint32_t> candidates;
    for (size_t p = 0; p < probes; ++p) {
        const auto& list = m_lists[order[p].second];
        candidates.insert(candidates.end(), list.begin(), list.end());
    }
    return top_k(index, query, k, candidates);
}

double approximate_recall(const IvfIndex& ivf, const DenseIndex& index,
                          std::span<const std::vector<float>> queries, size_t k)
{
    double total = 0.0;
    for (const auto& q : queries) {
        auto exact = search_dense(index, q, k);
        auto approx = ivf.search(index, q, k);
        std::unordered_set<std::string> truth;
        for (const auto& e : exact) {
            truth.insert(e.id);
        }
        size_t hit = 0;
        for (const auto& a : approx) {
            hit += truth.count(a.id);
        }
        total += exact.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(exact.size());
    }
    return queries.empty() ? 1.0 : total / static_cast<double>(queries.size());
}

}  // namespace tabtext
