#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "hytwin/seq2seq.hpp"

namespace hytwin::surrogate {

struct RmsPropConfig {
    double lr = 1e-3;
    double rho = 0.9;
    double eps = 1e-7;
};

/// Squared-gradient accumulators, one per parameter, in Seq2SeqParams layout.
struct OptimizerState {
    RmsPropConfig config;
    Seq2SeqParams v;

    /// Zero accumulators shaped like `params`.
    static OptimizerState for_params(const Seq2SeqParams& params, RmsPropConfig config = {});
};

/// v <- rho*v + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(v)+eps).
/// Throws SHAPE_MISMATCH.
void rmsprop_step(Seq2SeqParams& params, const Seq2SeqParams& grads, OptimizerState& opt);

/// Global L2 norm over every gradient entry.
[[nodiscard]] double global_norm(const Seq2SeqParams& grads);

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::uint64_t seed = 42;
    RmsPropConfig optimizer;
    std::optional<double> clip_norm = 5.0;
    bool shuffle = true;
    /// Learning rate multiplier applied after every epoch.
    double lr_decay = 1.0;
    /// Called after every epoch with (epoch, mean loss).
    std::function<void(std::size_t, double)> on_epoch;
};

struct TrainReport {
    std::vector<double> epoch_loss;  // mean loss of the windows seen in each epoch
    std::size_t steps = 0;
};

/// Uniform [-1/sqrt(H), 1/sqrt(H)] draws in parameter order, then +1 on the
/// forget-gate biases of both cells.
[[nodiscard]] Seq2SeqParams initialize_params(const Seq2SeqDims& dims, std::uint64_t seed);

struct TrainResult {
    Seq2SeqModel model;
    TrainReport report;
};

/// Mini-batch RMSprop on shuffled windows. Throws EMPTY_DATASET,
/// NONFINITE_LOSS or TRAIN_CONFIG_INVALID.
[[nodiscard]] TrainResult train(const WindowedDataset& dataset, Index hidden, const TrainConfig& config);

/// Mean window loss of a model over a dataset.
[[nodiscard]] double dataset_loss(const Seq2SeqDims& dims, const Seq2SeqParams& params,
                                  const WindowedDataset& dataset);

}  // namespace hytwin::surrogate
