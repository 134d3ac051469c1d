#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tabtext/bm25.hpp"
#include "tabtext/encoder.hpp"

namespace tabtext {

/// Row-major n x dim matrix of block embeddings with their ids.
struct DenseIndex {
    std::vector<std::string> ids;
    std::vector<float> data;
    uint32_t dim = 0;
    Pooling strategy = Pooling::First;
    uint64_t checksum = 0;

    size_t size() const { return ids.size(); }
    std::span<const float> row(size_t i) const { return {data.data() + i * dim, dim}; }
};

inline constexpr uint32_t kIndexVersion = 1;

/// Validates shapes and id uniqueness and fills in the checksum.
DenseIndex make_dense_index(std::vector<std::string> ids, std::vector<float> data, uint32_t dim, Pooling strategy);

/// FNV-1a over the little-endian payload followed by the newline-joined ids.
uint64_t dense_checksum(const DenseIndex& index);

/// One pooled embedding per block, encoded with the checkpoint's block tower
/// and pooling strategy.
DenseIndex build_dense(std::span<const FlattenedBlock> blocks, const Checkpoint& checkpoint,
                       const Tokenizer& tokenizer, size_t threads = 1);

/// index.bin: "OTTE", u32 version, u64 n, u32 dim, u8 strategy, u64 checksum,
/// then little-endian f32 rows. Ids go to a sidecar text file, one per line.
void write_dense_index(const DenseIndex& index, const std::filesystem::path& bin_path,
                       const std::filesystem::path& ids_path);
DenseIndex read_dense_index(const std::filesystem::path& bin_path, const std::filesystem::path& ids_path);

/// Dot product accumulated in double, rounded to float.
float dense_score(std::span<const float> a, std::span<const float> b);

std::vector<float> to_float(const Eigen::VectorXd& v);

/// Exact top-k by dot product, ties by id ascending. k > n returns n results.
std::vector<ScoredId> search_dense(const DenseIndex& index, std::span<const float> query, size_t k);

struct IvfConfig {
    size_t lists = 0;  // 0 -> ceil(sqrt(n))
    size_t probes = 8;
    size_t iterations = 10;
    uint64_t seed = 0;
    double target_recall = 0.95;
    size_t self_test_queries = 100;
    size_t self_test_k = 10;
};

/// Clustering shortlist: k-means centroids, queries probe the nearest lists
/// and rerank exactly inside them. Building runs a recall self-test against
/// exact search and throws ApproximateRecall when below target.
class IvfIndex {
  public:
    static IvfIndex build(const DenseIndex& index, const IvfConfig& config);

    std::vector<ScoredId> search(const DenseIndex& index, std::span<const float> query, size_t k,
                                 size_t probes) const;
    std::vector<ScoredId> search(const DenseIndex& index, std::span<const float> query, size_t k) const
    {
        return search(index, query, k, m_config.probes);
    }

    double measured_recall() const { return m_measured_recall; }
    size_t list_count() const { return m_lists.size(); }

  private:
    IvfConfig m_config;
    uint32_t m_dim = 0;
    std::vector<float> m_centroids;
    std::vector<std::vector<uint32_t>> m_lists;
    double m_measured_recall = 0.0;
};

/// Mean |approx top-k ∩ exact top-k| / k over the queries.
double approximate_recall(const IvfIndex& ivf, const DenseIndex& index,
                          std::span<const std::vector<float>> queries, size_t k);

}  // namespace tabtext
