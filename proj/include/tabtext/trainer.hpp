#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tabtext/encoder.hpp"
#include "tabtext/negatives.hpp"

namespace tabtext {

/// Which hard negatives enter question i's candidate set besides the B
/// in-batch positives: every hard negative of the batch (m = 2B - 1) or only
/// its own (m = B).
enum class NegativeConvention { AllInBatch, OwnHardNegative };

std::string_view to_string(NegativeConvention convention);
NegativeConvention parse_negative_convention(std::string_view name);

struct TrainConfig {
    size_t batch_size = 16;
    size_t epochs = 10;
    double learning_rate = 0.05;
    double warmup_fraction = 0.1;
    uint64_t seed = 0;
    NegativeConvention convention = NegativeConvention::AllInBatch;
    size_t threads = 1;
    double divergence_threshold = 1e3;

    void validate() const;
};

json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const json& value);

struct TrainExample {
    EncoderInput question;
    EncoderInput positive;
    EncoderInput negative;
};

/// Flattens, truncates and tokenizes every instance. Positives are looked up
/// in `blocks`; negatives are taken from the instance.
std::vector<TrainExample> prepare_examples(std::span<const TrainInstance> instances, const BlockCorpus& blocks,
                                           const Tokenizer& tokenizer, const Vocabulary& vocab,
                                           size_t block_budget = kBlockTokenBudget,
                                           size_t question_budget = kQuestionTokenBudget);

/// -log softmax(scores)[target], computed with the max shift.
double softmax_cross_entropy(std::span<const double> scores, size_t target);

struct DualGrad {
    EncoderGrad block;
    std::optional<EncoderGrad> question;
};

struct BatchLoss {
    double loss = 0.0;
    DualGrad grad;
};

/// Mean over the batch of -log softmax over question i's candidates, with
/// gradients for every tower parameter. Needs B >= 2.
BatchLoss batch_loss(const DualEncoder& model, std::span<const TrainExample> batch, NegativeConvention convention,
                     size_t threads = 1);

/// Forward pass only.
double batch_loss_value(const DualEncoder& model, std::span<const TrainExample> batch,
                        NegativeConvention convention);

struct GradCheckResult {
    double max_relative_error = 0.0;
    size_t coordinates = 0;
    std::string worst;
};

/// Relative error floor: |a - f| / max(|a|, |f|, floor).
inline constexpr double kGradCheckFloor = 1e-7;

/// Compares analytic gradients with central differences on a random sample
/// of `coordinates` parameter entries (embedding rows of tokens in the batch,
/// mixing, projection, attention).
GradCheckResult grad_check(const DualEncoder& model, std::span<const TrainExample> batch,
                           NegativeConvention convention, double epsilon, size_t coordinates = 200,
                           uint64_t seed = 0);

/// Linear warmup over the first warmup_fraction of steps, then linear decay.
double learning_rate_at(const TrainConfig& config, size_t step, size_t total_steps);

size_t batches_per_epoch(size_t examples, size_t batch_size);

struct LossPoint {
    size_t epoch = 0;
    size_t step = 0;
    double loss = 0.0;

    bool operator==(const LossPoint&) const = default;
};

struct TrainResult {
    DualEncoder final_model;
    DualEncoder best_model;
    std::vector<LossPoint> curve;
    std::vector<double> epoch_means;
    size_t best_epoch = 0;
    bool diverged = false;
};

/// Plain gradient descent over seeded per-epoch shuffles. Starting at
/// `start_epoch` with the model saved after that many epochs reproduces the
/// uninterrupted run.
TrainResult train(const TrainConfig& config, std::span<const TrainExample> examples, DualEncoder model,
                  size_t start_epoch = 0,
                  const std::function<void(size_t, const DualEncoder&)>& on_epoch = {});

void write_loss_curve(const std::filesystem::path& path, std::span<const LossPoint> curve);

}  // namespace tabtext
