#include "tabtext/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "binary_io.hpp"
#include "tabtext/error.hpp"
#include "tabtext/jsonl.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

std::string_view to_string(Pooling pooling)
{
    switch (pooling) {
    case Pooling::First: return "first";
    case Pooling::Avg: return "avg";
    case Pooling::Max: return "max";
    case Pooling::SelfAtt: return "selfatt";
    case Pooling::Cls3: return "cls3";
    }
    return "first";
}

Pooling parse_pooling(std::string_view name)
{
    for (auto p : kAllPoolings) {
        if (to_string(p) == name) {
            return p;
        }
    }
    throw Error(ErrorKind::InvalidArgument, "unknown pooling strategy '" + std::string(name) + "'");
}

Pooling pooling_from_tag(uint8_t tag)
{
    if (tag > static_cast<uint8_t>(Pooling::Cls3)) {
        throw Error(ErrorKind::Format, "unknown strategy tag " + std::to_string(tag));
    }
    return static_cast<Pooling>(tag);
}

// --- vocabulary ------------------------------------------------------------

namespace {

std::vector<std::string> reserved_keys()
{
    std::vector<std::string> keys{std::string(kUnkToken), std::string(kClsToken)};
    for (auto m : kSpecialMarkers) {
        keys.emplace_back(m);
    }
    return keys;
}

}  // namespace

Vocabulary::Vocabulary() : m_keys(reserved_keys())
{
    reindex();
}

void Vocabulary::reindex()
{
    m_ids.clear();
    for (size_t i = 0; i < m_keys.size(); ++i) {
        if (!m_ids.emplace(m_keys[i], static_cast<int32_t>(i)).second) {
            throw Error(ErrorKind::DuplicateId, "vocabulary key '" + m_keys[i] + "' appears twice");
        }
    }
}

Vocabulary Vocabulary::from_keys(std::vector<std::string> keys)
{
    auto reserved = reserved_keys();
    if (keys.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), keys.begin())) {
        throw Error(ErrorKind::Format, "vocabulary does not start with the reserved tokens");
    }
    Vocabulary v;
    v.m_keys = std::move(keys);
    v.reindex();
    return v;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, const Tokenizer& tokenizer)
{
    auto reserved = reserved_keys();
    std::set<std::string> fresh;
    for (const auto& text : texts) {
        for (const auto& tok : tokenizer.tokenize(text)) {
            if (is_special_marker(tok.text)) {
                continue;
            }
            auto key = term_key(tok.text);
            if (!key.empty() && std::find(reserved.begin(), reserved.end(), key) == reserved.end()) {
                fresh.insert(std::move(key));
            }
        }
    }
    auto keys = reserved;
    keys.insert(keys.end(), fresh.begin(), fresh.end());
    return from_keys(std::move(keys));
}

int32_t Vocabulary::id(std::string_view token) const
{
    if (token == kClsToken || token == kUnkToken || is_special_marker(token)) {
        return m_ids.at(std::string(token));
    }
    auto it = m_ids.find(term_key(token));
    return it == m_ids.end() ? 0 : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const
{
    auto out = open_output(path);
    for (const auto& k : m_keys) {
        out << k << '\n';
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path)
{
    auto in = open_input(path);
    std::vector<std::string> keys;
    std::string line;
    while (std::getline(in, line)) {
        keys.push_back(line);
    }
    return from_keys(std::move(keys));
}

// --- params ----------------------------------------------------------------

EncoderParams EncoderParams::random(size_t vocab_size, size_t dim, Rng& rng, double scale)
{
    if (dim < 2) {
        throw Error(ErrorKind::InvalidArgument, "hidden dimension must be at least 2");
    }
    EncoderParams p;
    auto fill = [&](auto& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                m(i, j) = static_cast<double>(static_cast<float>(rng.uniform(-scale, scale)));
            }
        }
    };
    p.embedding.resize(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(dim));
    p.mixing.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    p.projection.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    p.attention.resize(static_cast<Eigen::Index>(dim));
    fill(p.embedding);
    fill(p.mixing);
    fill(p.projection);
    for (Eigen::Index i = 0; i < p.attention.size(); ++i) {
        p.attention(i) = static_cast<double>(static_cast<float>(rng.uniform(-scale, scale)));
    }
    return p;
}

void EncoderParams::round_to_float()
{
    auto r = [](double x) { return static_cast<double>(static_cast<float>(x)); };
    embedding = embedding.unaryExpr(r);
    mixing = mixing.unaryExpr(r);
    projection = projection.unaryExpr(r);
    attention = attention.unaryExpr(r);
}

bool EncoderParams::finite() const
{
    return embedding.allFinite() && mixing.allFinite() && projection.allFinite() && attention.allFinite();
}

void EncoderParams::validate() const
{
    auto d = mixing.rows();
    if (d < 2 || mixing.cols() != d || projection.rows() != d || projection.cols() != d ||
        embedding.cols() != d || attention.size() != d) {
        throw Error(ErrorKind::DimensionMismatch, "encoder parameter shapes are inconsistent");
    }
    if (!finite()) {
        throw Error(ErrorKind::InvalidArgument, "encoder parameters contain non-finite values");
    }
}

// --- inputs ----------------------------------------------------------------

EncoderInput block_input(const FlattenedBlock& flat, const Tokenizer& tokenizer, const Vocabulary& vocab)
{
    auto tokens = tokenizer.tokenize(flat.text);
    if (tokens.size() != flat.token_count || flat.text_span.end != tokens.size() ||
        flat.table_span.end >= tokens.size()) {
        throw Error(ErrorKind::Format, "block '" + flat.block_id + "' spans do not match the " +
                                           std::string(tokenizer.name()) + " tokenizer");
    }
    if (tokens.front().text != kTabMarker || tokens[flat.table_span.end].text != kPsgMarker) {
        throw Error(ErrorKind::Format, "block '" + flat.block_id + "' is missing its [TAB]/[PSG] markers");
    }
    EncoderInput in;
    in.ids.reserve(tokens.size() + 1);
    in.ids.push_back(vocab.id(kClsToken));
    for (const auto& t : tokens) {
        in.ids.push_back(vocab.id(t.text));
    }
    in.tab_pos = 1;
    in.psg_pos = flat.table_span.end + 1;
    in.table_span = TokenRange{flat.table_span.begin + 1, flat.table_span.end + 1};
    in.text_span = TokenRange{flat.text_span.begin + 1, flat.text_span.end + 1};
    return in;
}

EncoderInput question_input(std::string_view text, const Tokenizer& tokenizer, const Vocabulary& vocab,
                            size_t budget)
{
    auto tokens = tokenizer.tokenize(text);
    if (tokens.empty()) {
        throw Error(ErrorKind::EmptyInput, "question has no tokens");
    }
    if (tokens.size() > budget) {
        tokens.resize(budget);
    }
    EncoderInput in;
    in.ids.reserve(tokens.size() + 1);
    in.ids.push_back(vocab.id(kClsToken));
    for (const auto& t : tokens) {
        in.ids.push_back(vocab.id(t.text));
    }
    return in;
}

// --- forward ---------------------------------------------------------------

HiddenStates encode_tokens(const EncoderParams& params, const EncoderInput& input)
{
    if (input.ids.empty()) {
        throw Error(ErrorKind::EmptyInput, "cannot encode an empty token sequence");
    }
    const auto T = static_cast<Eigen::Index>(input.ids.size());
    const auto d = static_cast<Eigen::Index>(params.dim());
    Eigen::MatrixXd pre(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        auto id = input.ids[static_cast<size_t>(t)];
        if (id < 0 || static_cast<size_t>(id) >= params.vocab_size()) {
            throw Error(ErrorKind::InvalidArgument, "token id " + std::to_string(id) + " outside the vocabulary");
        }
        pre.row(t) = params.embedding.row(id);
    }
    HiddenStates hs;
    hs.context = pre.colwise().mean().transpose();
    Eigen::RowVectorXd mixed = (params.mixing * hs.context).transpose();
    pre.rowwise() += mixed;
    hs.activation = pre.array().tanh().matrix();
    hs.hidden = hs.activation * params.projection.transpose();
    hs.tab_pos = input.tab_pos;
    hs.psg_pos = input.psg_pos;
    hs.table_span = input.table_span;
    hs.text_span = input.text_span;
    return hs;
}

namespace {

enum class Reduce { Avg, Max, SelfAtt };

Eigen::VectorXd softmax_weights(const HiddenStates& hs, TokenRange span, const Eigen::VectorXd& attention)
{
    Eigen::VectorXd s = hs.hidden.middleRows(static_cast<Eigen::Index>(span.begin),
                                             static_cast<Eigen::Index>(span.size())) *
                        attention;
    double mx = s.maxCoeff();
    Eigen::VectorXd e = (s.array() - mx).exp().matrix();
    return e / e.sum();
}

Eigen::VectorXd reduce_span(const HiddenStates& hs, TokenRange span, size_t marker, Reduce mode,
                            const Eigen::VectorXd& attention)
{
    if (span.empty()) {
        return hs.hidden.row(static_cast<Eigen::Index>(marker)).transpose();
    }
    auto rows = hs.hidden.middleRows(static_cast<Eigen::Index>(span.begin), static_cast<Eigen::Index>(span.size()));
    switch (mode) {
    case Reduce::Avg: return rows.colwise().mean().transpose();
    case Reduce::Max: return rows.colwise().maxCoeff().transpose();
    case Reduce::SelfAtt: return rows.transpose() * softmax_weights(hs, span, attention);
    }
    return {};
}

void reduce_span_backward(const HiddenStates& hs, TokenRange span, size_t marker, Reduce mode,
                          const Eigen::VectorXd& attention, const Eigen::VectorXd& grad,
                          Eigen::MatrixXd& grad_hidden, Eigen::VectorXd& grad_attention)
{
    if (span.empty()) {
        grad_hidden.row(static_cast<Eigen::Index>(marker)) += grad.transpose();
        return;
    }
    const auto begin = static_cast<Eigen::Index>(span.begin);
    const auto n = static_cast<Eigen::Index>(span.size());
    switch (mode) {
    case Reduce::Avg:
        grad_hidden.middleRows(begin, n).rowwise() += grad.transpose() / static_cast<double>(n);
        break;
    case Reduce::Max:
        for (Eigen::Index j = 0; j < grad.size(); ++j) {
            Eigen::Index arg = 0;
            hs.hidden.col(j).segment(begin, n).maxCoeff(&arg);
            grad_hidden(begin + arg, j) += grad(j);
        }
        break;
    case Reduce::SelfAtt: {
        auto rows = hs.hidden.middleRows(begin, n);
        Eigen::VectorXd alpha = softmax_weights(hs, span, attention);
        Eigen::VectorXd pooled = rows.transpose() * alpha;
        // d pooled / d s_t = alpha_t (h_t - pooled)
        Eigen::VectorXd gh = rows * grad;  // g . h_t
        Eigen::VectorXd ds = alpha.array() * (gh.array() - grad.dot(pooled));
        grad_hidden.middleRows(begin, n) += alpha * grad.transpose() + ds * attention.transpose();
        grad_attention += rows.transpose() * ds;
        break;
    }
    }
}

Reduce reduce_mode(Pooling p)
{
    switch (p) {
    case Pooling::Avg: return Reduce::Avg;
    case Pooling::Max: return Reduce::Max;
    default: return Reduce::SelfAtt;
    }
}

}  // namespace

MerEmbedding pool_block(const HiddenStates& hs, Pooling strategy, const Eigen::VectorXd& attention)
{
    const auto d = hs.hidden.cols();
    MerEmbedding out;
    out.strategy = strategy;
    out.values.resize(3 * d);
    out.values.segment(0, d) = hs.hidden.row(0).transpose();
    switch (strategy) {
    case Pooling::First:
        out.values.segment(d, d) = hs.hidden.row(static_cast<Eigen::Index>(hs.tab_pos)).transpose();
        out.values.segment(2 * d, d) = hs.hidden.row(static_cast<Eigen::Index>(hs.psg_pos)).transpose();
        break;
    case Pooling::Cls3:
        out.values.segment(d, d) = hs.hidden.row(0).transpose();
        out.values.segment(2 * d, d) = hs.hidden.row(0).transpose();
        break;
    case Pooling::Avg:
    case Pooling::Max:
    case Pooling::SelfAtt: {
        auto mode = reduce_mode(strategy);
        out.values.segment(d, d) = reduce_span(hs, hs.table_span, hs.tab_pos, mode, attention);
        out.values.segment(2 * d, d) = reduce_span(hs, hs.text_span, hs.psg_pos, mode, attention);
        break;
    }
    }
    return out;
}

Eigen::MatrixXd pool_block_backward(const HiddenStates& hs, Pooling strategy, const Eigen::VectorXd& attention,
                                    const Eigen::VectorXd& grad_pooled, Eigen::VectorXd& grad_attention)
{
    const auto d = hs.hidden.cols();
    if (grad_pooled.size() != 3 * d) {
        throw Error(ErrorKind::DimensionMismatch, "pooled gradient has the wrong size");
    }
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(hs.hidden.rows(), d);
    grad.row(0) += grad_pooled.segment(0, d).transpose();
    switch (strategy) {
    case Pooling::First:
        grad.row(static_cast<Eigen::Index>(hs.tab_pos)) += grad_pooled.segment(d, d).transpose();
        grad.row(static_cast<Eigen::Index>(hs.psg_pos)) += grad_pooled.segment(2 * d, d).transpose();
        break;
    case Pooling::Cls3:
        grad.row(0) += (grad_pooled.segment(d, d) + grad_pooled.segment(2 * d, d)).transpose();
        break;
    case Pooling::Avg:
    case Pooling::Max:
    case Pooling::SelfAtt: {
        auto mode = reduce_mode(strategy);
        reduce_span_backward(hs, hs.table_span, hs.tab_pos, mode, attention, grad_pooled.segment(d, d), grad,
                             grad_attention);
        reduce_span_backward(hs, hs.text_span, hs.psg_pos, mode, attention, grad_pooled.segment(2 * d, d),
                             grad, grad_attention);
        break;
    }
    }
    return grad;
}

MerEmbedding encode_question(const EncoderParams& params, const EncoderInput& input, Pooling strategy)
{
    auto hs = encode_tokens(params, input);
    const auto d = hs.hidden.cols();
    MerEmbedding out;
    out.strategy = strategy;
    out.values.resize(3 * d);
    for (int k = 0; k < 3; ++k) {
        out.values.segment(k * d, d) = hs.hidden.row(0).transpose();
    }
    return out;
}

double score(const MerEmbedding& question, const MerEmbedding& block)
{
    if (question.values.size() != block.values.size()) {
        throw Error(ErrorKind::DimensionMismatch, "question has dimension " + std::to_string(question.values.size()) +
                                                      ", block has " + std::to_string(block.values.size()));
    }
    return question.values.dot(block.values);
}

// --- backward --------------------------------------------------------------

EncoderGrad::EncoderGrad(size_t dim)
    : mixing(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))),
      projection(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))),
      attention(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)))
{}

void EncoderGrad::accumulate(const EncoderGrad& other)
{
    for (const auto& [id, row] : other.embedding) {
        auto [it, inserted] = embedding.try_emplace(id, row);
        if (!inserted) {
            it->second += row;
        }
    }
    mixing += other.mixing;
    projection += other.projection;
    attention += other.attention;
}

void EncoderGrad::scale(double factor)
{
    for (auto& [_, row] : embedding) {
        row *= factor;
    }
    mixing *= factor;
    projection *= factor;
    attention *= factor;
}

void encode_tokens_backward(const EncoderParams& params, const EncoderInput& input, const HiddenStates& hs,
                            const Eigen::MatrixXd& grad_hidden, EncoderGrad& grad)
{
    const auto T = static_cast<double>(input.ids.size());
    grad.projection += grad_hidden.transpose() * hs.activation;
    Eigen::MatrixXd grad_pre =
        ((grad_hidden * params.projection).array() * (1.0 - hs.activation.array().square())).matrix();
    Eigen::VectorXd column_sum = grad_pre.colwise().sum().transpose();
    grad.mixing += column_sum * hs.context.transpose();
    Eigen::RowVectorXd via_context = (params.mixing.transpose() * column_sum).transpose() / T;
    for (size_t t = 0; t < input.ids.size(); ++t) {
        Eigen::VectorXd row = (grad_pre.row(static_cast<Eigen::Index>(t)) + via_context).transpose();
        auto [it, inserted] = grad.embedding.try_emplace(input.ids[t], row);
        if (!inserted) {
            it->second += row;
        }
    }
}

MerEmbedding embed_block(const DualEncoder& model, const EncoderInput& input)
{
    auto hs = encode_tokens(model.block, input);
    return pool_block(hs, model.strategy, model.block.attention);
}

MerEmbedding embed_question(const DualEncoder& model, const EncoderInput& input)
{
    return encode_question(model.question_tower(), input, model.strategy);
}

// --- checkpoint ------------------------------------------------------------

void save_encoder_params(const std::filesystem::path& path, const EncoderParams& params, Pooling strategy)
{
    params.validate();
    auto out = open_output(path, true);
    detail::write_magic(out);
    detail::write_le<uint32_t>(out, kCheckpointVersion);
    detail::write_le<uint32_t>(out, static_cast<uint32_t>(params.vocab_size()));
    detail::write_le<uint32_t>(out, static_cast<uint32_t>(params.dim()));
    detail::write_le<uint8_t>(out, static_cast<uint8_t>(strategy));
    auto write_matrix = [&](const Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                detail::write_f32(out, static_cast<float>(m(i, j)));
            }
        }
    };
    write_matrix(params.embedding);
    write_matrix(params.mixing);
    write_matrix(params.projection);
    for (Eigen::Index i = 0; i < params.attention.size(); ++i) {
        detail::write_f32(out, static_cast<float>(params.attention(i)));
    }
    if (!out) {
        throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
    }
}

std::pair<EncoderParams, Pooling> load_encoder_params(const std::filesystem::path& path)
{
    auto in = open_input(path, true);
    detail::expect_magic(in, path.string());
    auto version = detail::read_le<uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::Format, path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    auto vocab = static_cast<Eigen::Index>(detail::read_le<uint32_t>(in));
    auto d = static_cast<Eigen::Index>(detail::read_le<uint32_t>(in));
    Pooling strategy = pooling_from_tag(detail::read_le<uint8_t>(in));
    if (d < 2) {
        throw Error(ErrorKind::Format, path.string() + ": hidden dimension below 2");
    }
    EncoderParams p;
    auto read_matrix = [&](Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
        m.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                m(i, j) = detail::read_f32(in);
            }
        }
    };
    read_matrix(p.embedding, vocab, d);
    read_matrix(p.mixing, d, d);
    read_matrix(p.projection, d, d);
    p.attention.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        p.attention(i) = detail::read_f32(in);
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorKind::Format, path.string() + ": trailing bytes after parameters");
    }
    p.validate();
    return {std::move(p), strategy};
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& path, const char* suffix)
{
    return std::filesystem::path(path.string() + suffix);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    if (ckpt.vocab.size() != ckpt.model.block.vocab_size()) {
        throw Error(ErrorKind::DimensionMismatch, "vocabulary size does not match the embedding matrix");
    }
    save_encoder_params(path, ckpt.model.block, ckpt.model.strategy);
    ckpt.vocab.save(sidecar(path, ".vocab"));
    auto question_path = sidecar(path, ".question");
    if (ckpt.model.question) {
        save_encoder_params(question_path, *ckpt.model.question, ckpt.model.strategy);
    } else {
        std::filesystem::remove(question_path);
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    Checkpoint ckpt;
    auto [block, strategy] = load_encoder_params(path);
    ckpt.model.block = std::move(block);
    ckpt.model.strategy = strategy;
    ckpt.vocab = Vocabulary::load(sidecar(path, ".vocab"));
    if (ckpt.vocab.size() != ckpt.model.block.vocab_size()) {
        throw Error(ErrorKind::DimensionMismatch, path.string() + ": vocabulary size does not match the checkpoint");
    }
    auto question_path = sidecar(path, ".question");
    if (std::filesystem::exists(question_path)) {
        auto [question, qstrategy] = load_encoder_params(question_path);
        if (qstrategy != strategy || question.dim() != ckpt.model.block.dim() ||
            question.vocab_size() != ckpt.model.block.vocab_size()) {
            throw Error(ErrorKind::ConfigConflict, path.string() + ": question tower does not match block tower");
        }
        ckpt.model.question = std::move(question);
    }
    return ckpt;
}

}  // namespace tabtext
