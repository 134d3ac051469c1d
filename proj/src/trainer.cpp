#include "tabtext/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tabtext/error.hpp"
#include "tabtext/parallel.hpp"

namespace tabtext {

std::string_view to_string(NegativeConvention convention)
{
    return convention == NegativeConvention::AllInBatch ? "all_in_batch" : "own_hard_negative";
}

NegativeConvention parse_negative_convention(std::string_view name)
{
    if (name == "all_in_batch") return NegativeConvention::AllInBatch;
    if (name == "own_hard_negative") return NegativeConvention::OwnHardNegative;
    throw Error(ErrorKind::InvalidArgument, "unknown negative convention '" + std::string(name) + "'");
}

void TrainConfig::validate() const
{
    if (batch_size < 2) {
        throw Error(ErrorKind::InvalidArgument, "batch size must be at least 2");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw Error(ErrorKind::InvalidArgument, "learning rate must be a finite non-negative number");
    }
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0) {
        throw Error(ErrorKind::InvalidArgument, "warmup fraction must be in [0, 1]");
    }
}

json to_json(const TrainConfig& c)
{
    return json{{"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"learning_rate", c.learning_rate},
                {"warmup_fraction", c.warmup_fraction},
                {"seed", c.seed},
                {"convention", std::string(to_string(c.convention))},
                {"threads", c.threads},
                {"divergence_threshold", c.divergence_threshold}};
}

TrainConfig train_config_from_json(const json& v)
{
    TrainConfig c;
    c.batch_size = v.value("batch_size", c.batch_size);
    c.epochs = v.value("epochs", c.epochs);
    c.learning_rate = v.value("learning_rate", c.learning_rate);
    c.warmup_fraction = v.value("warmup_fraction", c.warmup_fraction);
    c.seed = v.value("seed", c.seed);
    c.convention = parse_negative_convention(v.value("convention", std::string(to_string(c.convention))));
    c.threads = v.value("threads", c.threads);
    c.divergence_threshold = v.value("divergence_threshold", c.divergence_threshold);
    return c;
}

std::vector<TrainExample> prepare_examples(std::span<const TrainInstance> instances, const BlockCorpus& blocks,
                                           const Tokenizer& tokenizer, const Vocabulary& vocab,
                                           size_t block_budget, size_t question_budget)
{
    auto encode_block = [&](const TableTextBlock& b) {
        return block_input(truncate(flatten(b, tokenizer), block_budget, tokenizer), tokenizer, vocab);
    };
    std::vector<TrainExample> out;
    out.reserve(instances.size());
    for (const auto& inst : instances) {
        const TableTextBlock* pos = blocks.find(inst.positive_block_id);
        if (pos == nullptr) {
            throw Error(ErrorKind::DanglingTable, "instance '" + inst.question_id + "' names unknown block '" +
                                                      inst.positive_block_id + "'");
        }
        out.push_back(TrainExample{question_input(inst.question, tokenizer, vocab, question_budget),
                                   encode_block(*pos), encode_block(inst.hard_negative)});
    }
    return out;
}

double softmax_cross_entropy(std::span<const double> scores, size_t target)
{
    double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (double s : scores) {
        sum += std::exp(s - mx);
    }
    return std::log(sum) + mx - scores[target];
}

namespace {

struct Candidates {
    std::vector<size_t> positives;  // candidate j -> positive index
    std::vector<size_t> negatives;  // candidate j -> negative index
};

// Candidate list for question i: all in-batch positives, then the hard
// negatives allowed by the convention. The target is candidate i.
std::vector<std::pair<bool, size_t>> candidates_for(size_t i, size_t batch, NegativeConvention convention)
{
    std::vector<std::pair<bool, size_t>> out;
    out.reserve(2 * batch);
    for (size_t j = 0; j < batch; ++j) {
        out.emplace_back(true, j);
    }
    if (convention == NegativeConvention::AllInBatch) {
        for (size_t j = 0; j < batch; ++j) {
            out.emplace_back(false, j);
        }
    } else {
        out.emplace_back(false, i);
    }
    return out;
}

struct Forward {
    std::vector<HiddenStates> questions, positives, negatives;
    std::vector<Eigen::VectorXd> q, p, n;
};

Forward forward(const DualEncoder& model, std::span<const TrainExample> batch, size_t threads)
{
    const size_t B = batch.size();
    Forward f;
    f.questions.resize(B);
    f.positives.resize(B);
    f.negatives.resize(B);
    f.q.resize(B);
    f.p.resize(B);
    f.n.resize(B);
    const auto& qt = model.question_tower();
    parallel_for(3 * B, threads, [&](size_t s) {
        size_t i = s / 3;
        switch (s % 3) {
        case 0:
            f.questions[i] = encode_tokens(qt, batch[i].question);
            f.q[i] = encode_question(qt, batch[i].question).values;
            break;
        case 1:
            f.positives[i] = encode_tokens(model.block, batch[i].positive);
            f.p[i] = pool_block(f.positives[i], model.strategy, model.block.attention).values;
            break;
        default:
            f.negatives[i] = encode_tokens(model.block, batch[i].negative);
            f.n[i] = pool_block(f.negatives[i], model.strategy, model.block.attention).values;
            break;
        }
    });
    return f;
}

void check_batch(const DualEncoder& model, std::span<const TrainExample> batch)
{
    if (batch.size() < 2) {
        throw Error(ErrorKind::InvalidArgument, "a batch needs at least 2 instances");
    }
    model.block.validate();
    if (model.question) {
        model.question->validate();
        if (model.question->dim() != model.block.dim()) {
            throw Error(ErrorKind::DimensionMismatch, "question and block towers differ in dimension");
        }
    }
}

}  // namespace

BatchLoss batch_loss(const DualEncoder& model, std::span<const TrainExample> batch, NegativeConvention convention,
                     size_t threads)
{
    check_batch(model, batch);
    const size_t B = batch.size();
    const auto d = static_cast<Eigen::Index>(model.dim());
    Forward f = forward(model, batch, threads);

    std::vector<Eigen::VectorXd> gq(B, Eigen::VectorXd::Zero(3 * d));
    std::vector<Eigen::VectorXd> gp(B, Eigen::VectorXd::Zero(3 * d));
    std::vector<Eigen::VectorXd> gn(B, Eigen::VectorXd::Zero(3 * d));
    double total = 0.0;
    for (size_t i = 0; i < B; ++i) {
        auto cands = candidates_for(i, B, convention);
        std::vector<double> scores;
        scores.reserve(cands.size());
        for (auto [is_pos, j] : cands) {
            scores.push_back(f.q[i].dot(is_pos ? f.p[j] : f.n[j]));
        }
        double loss_i = softmax_cross_entropy(scores, i);
        if (!std::isfinite(loss_i)) {
            char msg[160];
            std::snprintf(msg, sizeof(msg), "question %zu of %zu: loss %g, max score %g, target score %g", i, B,
                          loss_i, *std::max_element(scores.begin(), scores.end()), scores[i]);
            throw Error(ErrorKind::NonFiniteLoss, msg);
        }
        total += loss_i;
        double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double s : scores) {
            z += std::exp(s - mx);
        }
        for (size_t c = 0; c < cands.size(); ++c) {
            double g = (std::exp(scores[c] - mx) / z - (c == i ? 1.0 : 0.0)) / static_cast<double>(B);
            auto [is_pos, j] = cands[c];
            const Eigen::VectorXd& b = is_pos ? f.p[j] : f.n[j];
            gq[i] += g * b;
            (is_pos ? gp[j] : gn[j]) += g * f.q[i];
        }
    }

    // Per-sequence backward passes, reduced in sequence order.
    const auto& qt = model.question_tower();
    std::vector<EncoderGrad> seq_grads(3 * B, EncoderGrad(model.dim()));
    parallel_for(3 * B, threads, [&](size_t s) {
        size_t i = s / 3;
        auto& g = seq_grads[s];
        switch (s % 3) {
        case 0: {
            Eigen::MatrixXd gh = Eigen::MatrixXd::Zero(f.questions[i].hidden.rows(), d);
            gh.row(0) = (gq[i].segment(0, d) + gq[i].segment(d, d) + gq[i].segment(2 * d, d)).transpose();
            encode_tokens_backward(qt, batch[i].question, f.questions[i], gh, g);
            break;
        }
        case 1: {
            auto gh = pool_block_backward(f.positives[i], model.strategy, model.block.attention, gp[i], g.attention);
            encode_tokens_backward(model.block, batch[i].positive, f.positives[i], gh, g);
            break;
        }
        default: {
            auto gh = pool_block_backward(f.negatives[i], model.strategy, model.block.attention, gn[i], g.attention);
            encode_tokens_backward(model.block, batch[i].negative, f.negatives[i], gh, g);
            break;
        }
        }
    });
    BatchLoss out{total / static_cast<double>(B), DualGrad{EncoderGrad(model.dim()), std::nullopt}};
    if (model.question) {
        out.grad.question = EncoderGrad(model.dim());
    }
    for (size_t s = 0; s < 3 * B; ++s) {
        bool question_side = (s % 3 == 0) && model.question;
        (question_side ? *out.grad.question : out.grad.block).accumulate(seq_grads[s]);
    }
    return out;
}

double batch_loss_value(const DualEncoder& model, std::span<const TrainExample> batch,
                        NegativeConvention convention)
{
    check_batch(model, batch);
    const size_t B = batch.size();
    Forward f = forward(model, batch, 1);
    double total = 0.0;
    for (size_t i = 0; i < B; ++i) {
        std::vector<double> scores;
        for (auto [is_pos, j] : candidates_for(i, B, convention)) {
            scores.push_back(f.q[i].dot(is_pos ? f.p[j] : f.n[j]));
        }
        total += softmax_cross_entropy(scores, i);
    }
    return total / static_cast<double>(B);
}

// --- gradient check --------------------------------------------------------

namespace {

struct Coordinate {
    bool question_tower = false;
    int block = 0;  // 0 E, 1 A, 2 P, 3 w
    Eigen::Index row = 0;
    Eigen::Index col = 0;
};

double& entry(DualEncoder& model, const Coordinate& c)
{
    EncoderParams& p = c.question_tower ? *model.question : model.block;
    switch (c.block) {
    case 0: return p.embedding(c.row, c.col);
    case 1: return p.mixing(c.row, c.col);
    case 2: return p.projection(c.row, c.col);
    default: return p.attention(c.row);
    }
}

double analytic(const DualGrad& grad, const Coordinate& c)
{
    const EncoderGrad& g = c.question_tower ? *grad.question : grad.block;
    switch (c.block) {
    case 0: {
        auto it = g.embedding.find(static_cast<int32_t>(c.row));
        return it == g.embedding.end() ? 0.0 : it->second(c.col);
    }
    case 1: return g.mixing(c.row, c.col);
    case 2: return g.projection(c.row, c.col);
    default: return g.attention(c.row);
    }
}

std::string describe(const Coordinate& c)
{
    static const char* names[] = {"E", "A", "P", "w_att"};
    return std::string(c.question_tower ? "question." : "block.") + names[c.block] + "(" + std::to_string(c.row) +
           "," + std::to_string(c.col) + ")";
}

}  // namespace

GradCheckResult grad_check(const DualEncoder& model, std::span<const TrainExample> batch,
                           NegativeConvention convention, double epsilon, size_t coordinates, uint64_t seed)
{
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
        throw Error(ErrorKind::InvalidArgument, "epsilon must lie in [1e-6, 1e-3]");
    }
    auto grads = batch_loss(model, batch, convention).grad;

    std::vector<Coordinate> all;
    const auto d = static_cast<Eigen::Index>(model.dim());
    auto add_tower = [&](bool question_tower) {
        std::vector<int32_t> ids;
        for (const auto& ex : batch) {
            const auto& seqs = question_tower ? std::vector<const EncoderInput*>{&ex.question}
                               : model.question ? std::vector<const EncoderInput*>{&ex.positive, &ex.negative}
                                                : std::vector<const EncoderInput*>{&ex.question, &ex.positive,
                                                                                   &ex.negative};
            for (const auto* s : seqs) {
                ids.insert(ids.end(), s->ids.begin(), s->ids.end());
            }
        }
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        for (auto id : ids) {
            for (Eigen::Index j = 0; j < d; ++j) {
                all.push_back({question_tower, 0, id, j});
            }
        }
        for (int blk = 1; blk <= 2; ++blk) {
            for (Eigen::Index i = 0; i < d; ++i) {
                for (Eigen::Index j = 0; j < d; ++j) {
                    all.push_back({question_tower, blk, i, j});
                }
            }
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            all.push_back({question_tower, 3, i, 0});
        }
    };
    add_tower(false);
    if (model.question) {
        add_tower(true);
    }
    Rng rng(seed);
    rng.shuffle(all);
    if (coordinates < all.size()) {
        all.resize(coordinates);
    }

    GradCheckResult result;
    DualEncoder probe = model;
    for (const auto& c : all) {
        double& x = entry(probe, c);
        const double saved = x;
        x = saved + epsilon;
        double up = batch_loss_value(probe, batch, convention);
        x = saved - epsilon;
        double down = batch_loss_value(probe, batch, convention);
        x = saved;
        double fd = (up - down) / (2.0 * epsilon);
        double a = analytic(grads, c);
        double err = (a == 0.0 && fd == 0.0)
                         ? 0.0
                         : std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), kGradCheckFloor});
        if (err > result.max_relative_error || result.worst.empty()) {
            result.max_relative_error = err;
            result.worst = describe(c);
        }
        ++result.coordinates;
    }
    return result;
}

// --- training loop ---------------------------------------------------------

double learning_rate_at(const TrainConfig& config, size_t step, size_t total_steps)
{
    if (total_steps == 0) {
        return 0.0;
    }
    auto warmup = static_cast<size_t>(std::floor(config.warmup_fraction * static_cast<double>(total_steps)));
    if (step < warmup) {
        return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    return config.learning_rate * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

size_t batches_per_epoch(size_t examples, size_t batch_size)
{
    size_t full = examples / batch_size;
    return full + ((examples % batch_size) >= 2 ? 1 : 0);
}

namespace {

void apply(EncoderParams& p, const EncoderGrad& g, double lr)
{
    auto r = [](double x) { return static_cast<double>(static_cast<float>(x)); };
    for (const auto& [id, row] : g.embedding) {
        p.embedding.row(id) = (p.embedding.row(id) - lr * row.transpose()).unaryExpr(r);
    }
    p.mixing = (p.mixing - lr * g.mixing).unaryExpr(r);
    p.projection = (p.projection - lr * g.projection).unaryExpr(r);
    p.attention = (p.attention - lr * g.attention).unaryExpr(r);
}

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const TrainExample> examples, DualEncoder model,
                  size_t start_epoch, const std::function<void(size_t, const DualEncoder&)>& on_epoch)
{
    config.validate();
    if (examples.empty()) {
        throw Error(ErrorKind::EmptyInput, "no training instances");
    }
    model.block.round_to_float();
    if (model.question) {
        model.question->round_to_float();
    }
    const size_t per_epoch = batches_per_epoch(examples.size(), config.batch_size);
    if (per_epoch == 0) {
        throw Error(ErrorKind::InvalidArgument, "fewer than 2 training instances");
    }
    const size_t total_steps = per_epoch * config.epochs;

    TrainResult result;
    result.final_model = model;
    result.best_model = model;
    double best = std::numeric_limits<double>::infinity();
    for (size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        std::vector<size_t> order(examples.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng = Rng::derive(config.seed, "epoch-" + std::to_string(epoch));
        rng.shuffle(order);

        double epoch_total = 0.0;
        for (size_t b = 0; b < per_epoch; ++b) {
            size_t begin = b * config.batch_size;
            size_t end = std::min(order.size(), begin + config.batch_size);
            std::vector<TrainExample> batch;
            batch.reserve(end - begin);
            for (size_t k = begin; k < end; ++k) {
                batch.push_back(examples[order[k]]);
            }
            size_t step = epoch * per_epoch + b;
            auto bl = batch_loss(model, batch, config.convention, config.threads);
            if (bl.loss > config.divergence_threshold) {
                result.diverged = true;
                return result;
            }
            result.curve.push_back(LossPoint{epoch, step, bl.loss});
            epoch_total += bl.loss;
            double lr = learning_rate_at(config, step, total_steps);
            if (lr > 0.0) {
                if (model.question) {
                    apply(*model.question, *bl.grad.question, lr);
                }
                apply(model.block, bl.grad.block, lr);
            }
        }
        double mean = epoch_total / static_cast<double>(per_epoch);
        result.epoch_means.push_back(mean);
        result.final_model = model;
        if (mean < best) {
            best = mean;
            result.best_model = model;
            result.best_epoch = epoch;
        }
        if (on_epoch) {
            on_epoch(epoch, model);
        }
    }
    return result;
}

void write_loss_curve(const std::filesystem::path& path, std::span<const LossPoint> curve)
{
    auto out = open_output(path);
    out << "epoch,step,loss\n";
    char buf[64];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%.17g", p.loss);
        out << p.epoch << ',' << p.step << ',' << buf << '\n';
    }
}

}  // namespace tabtext
