#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "tabtext/blocks.hpp"
#include "tabtext/rng.hpp"
#include "tabtext/tokenizer.hpp"

namespace tabtext {

/// Block pooling strategy. The numeric values are the on-disk tags.
enum class Pooling : uint8_t { First = 0, Avg = 1, Max = 2, SelfAtt = 3, Cls3 = 4 };

inline constexpr std::array<Pooling, 5> kAllPoolings = {Pooling::First, Pooling::Avg, Pooling::Max,
                                                        Pooling::SelfAtt, Pooling::Cls3};

std::string_view to_string(Pooling pooling);
Pooling parse_pooling(std::string_view name);
Pooling pooling_from_tag(uint8_t tag);

inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";

/// Token -> row of the embedding matrix. Lookups go through term_key, so
/// case and edge punctuation do not create separate entries. Row 0 is
/// [UNK], row 1 is [CLS], followed by the block markers.
class Vocabulary {
  public:
    Vocabulary();

    /// Restores a vocabulary from its key list (as written by save()).
    static Vocabulary from_keys(std::vector<std::string> keys);

    /// Adds every token of every text; new keys are appended in sorted order.
    static Vocabulary build(std::span<const std::string> texts, const Tokenizer& tokenizer);

    int32_t id(std::string_view token) const;
    size_t size() const { return m_keys.size(); }
    const std::vector<std::string>& keys() const { return m_keys; }

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

  private:
    void reindex();

    std::vector<std::string> m_keys;
    std::unordered_map<std::string, int32_t> m_ids;
};

/// h_t = P * tanh(E[tok_t] + A * mean_t' E[tok_t'])
struct EncoderParams {
    Eigen::MatrixXd embedding;   // V x d
    Eigen::MatrixXd mixing;      // A, d x d
    Eigen::MatrixXd projection;  // P, d x d
    Eigen::VectorXd attention;   // SelfAtt scoring vector, d

    size_t dim() const { return static_cast<size_t>(mixing.rows()); }
    size_t vocab_size() const { return static_cast<size_t>(embedding.rows()); }

    /// Entries i.i.d. uniform in [-scale, scale], stored at float precision.
    static EncoderParams random(size_t vocab_size, size_t dim, Rng& rng, double scale = 0.1);

    /// Rounds every entry to the nearest 32-bit float so the parameters
    /// survive a checkpoint round trip exactly.
    void round_to_float();
    bool finite() const;
    void validate() const;
};

/// Encoder input: token ids with a leading [CLS]; block inputs also carry
/// marker positions and modality spans, all in input coordinates.
struct EncoderInput {
    std::vector<int32_t> ids;
    size_t tab_pos = 0;
    size_t psg_pos = 0;
    TokenRange table_span;
    TokenRange text_span;
};

EncoderInput block_input(const FlattenedBlock& flat, const Tokenizer& tokenizer, const Vocabulary& vocab);
EncoderInput question_input(std::string_view text, const Tokenizer& tokenizer, const Vocabulary& vocab,
                            size_t budget = kQuestionTokenBudget);

struct HiddenStates {
    Eigen::MatrixXd hidden;      // T x d
    Eigen::MatrixXd activation;  // T x d, tanh(...) before projection
    Eigen::VectorXd context;     // mean embedding over the input
    size_t tab_pos = 0;
    size_t psg_pos = 0;
    TokenRange table_span;
    TokenRange text_span;
};

HiddenStates encode_tokens(const EncoderParams& params, const EncoderInput& input);

/// A 3d-dimensional block or question representation.
struct MerEmbedding {
    Eigen::VectorXd values;
    Pooling strategy = Pooling::First;
};

/// [h_0; table part; text part]. An empty modality span under AVG/MAX/SelfAtt
/// falls back to the marker's own hidden state.
MerEmbedding pool_block(const HiddenStates& hidden, Pooling strategy, const Eigen::VectorXd& attention);

/// [q; q; q] with q the hidden state of the leading [CLS] position.
MerEmbedding encode_question(const EncoderParams& params, const EncoderInput& input,
                             Pooling strategy = Pooling::First);

double score(const MerEmbedding& question, const MerEmbedding& block);

/// Gradient of pool_block. Returns dL/dhidden (T x d) and accumulates into
/// grad_attention (SelfAtt only).
Eigen::MatrixXd pool_block_backward(const HiddenStates& hidden, Pooling strategy,
                                    const Eigen::VectorXd& attention, const Eigen::VectorXd& grad_pooled,
                                    Eigen::VectorXd& grad_attention);

/// Sparse-in-E gradient of one encoder tower.
struct EncoderGrad {
    std::map<int32_t, Eigen::VectorXd> embedding;
    Eigen::MatrixXd mixing;
    Eigen::MatrixXd projection;
    Eigen::VectorXd attention;

    explicit EncoderGrad(size_t dim = 0);
    void accumulate(const EncoderGrad& other);
    void scale(double factor);
};

/// Back-propagates dL/dhidden through the encoder into `grad`.
void encode_tokens_backward(const EncoderParams& params, const EncoderInput& input,
                            const HiddenStates& hidden, const Eigen::MatrixXd& grad_hidden, EncoderGrad& grad);

/// Block tower plus an optional separate question tower.
struct DualEncoder {
    EncoderParams block;
    std::optional<EncoderParams> question;
    Pooling strategy = Pooling::First;

    const EncoderParams& question_tower() const { return question ? *question : block; }
    size_t dim() const { return block.dim(); }
};

MerEmbedding embed_block(const DualEncoder& model, const EncoderInput& input);
MerEmbedding embed_question(const DualEncoder& model, const EncoderInput& input);

struct Checkpoint {
    Vocabulary vocab;
    DualEncoder model;
};

/// Binary tower format: "OTTE", u32 version, u32 V, u32 d, u8 strategy, then
/// little-endian f32 E, A, P, w_att (row-major).
void save_encoder_params(const std::filesystem::path& path, const EncoderParams& params, Pooling strategy);
std::pair<EncoderParams, Pooling> load_encoder_params(const std::filesystem::path& path);

/// Writes `path` (block tower), `path.vocab` and, for separate towers,
/// `path.question`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr uint32_t kCheckpointVersion = 1;

}  // namespace tabtext
