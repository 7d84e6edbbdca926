#include "hytwin/training.hpp"

#include <cmath>
#include <numeric>

#include "hytwin/error.hpp"
#include "hytwin/random.hpp"

namespace hytwin::surrogate {

namespace {

bool same_shapes(const Seq2SeqParams& a, const Seq2SeqParams& b) {
    std::vector<Index> sa;
    std::vector<Index> sb;
    a.for_each([&](const char*, const double*, Index n) { sa.push_back(n); });
    b.for_each([&](const char*, const double*, Index n) { sb.push_back(n); });
    return sa == sb && a.encoder.W.cols() == b.encoder.W.cols() && a.decoder.W.cols() == b.decoder.W.cols();
}

void scale(Seq2SeqParams& p, double s) {
    p.for_each([&](const char*, double* data, Index n) {
        for (Index k = 0; k < n; ++k) {
            data[k] *= s;
        }
    });
}

void set_zero(Seq2SeqParams& p) { scale(p, 0.0); }

}  // namespace

OptimizerState OptimizerState::for_params(const Seq2SeqParams& params, RmsPropConfig config) {
    OptimizerState s{config, params};
    set_zero(s.v);
    return s;
}

void rmsprop_step(Seq2SeqParams& params, const Seq2SeqParams& grads, OptimizerState& opt) {
    if (!same_shapes(params, grads) || !same_shapes(params, opt.v)) {
        throw Error("SHAPE_MISMATCH", "parameters, gradients and optimizer state differ in shape");
    }
    std::vector<const double*> g;
    grads.for_each([&](const char*, const double* data, Index) { g.push_back(data); });
    std::vector<double*> v;
    opt.v.for_each([&](const char*, double* data, Index) { v.push_back(data); });

    const auto& c = opt.config;
    std::size_t block = 0;
    params.for_each([&](const char*, double* theta, Index n) {
        const double* gb = g[block];
        double* vb = v[block];
        for (Index k = 0; k < n; ++k) {
            vb[k] = c.rho * vb[k] + (1.0 - c.rho) * gb[k] * gb[k];
            theta[k] -= c.lr * gb[k] / (std::sqrt(vb[k]) + c.eps);
        }
        ++block;
    });
}

double global_norm(const Seq2SeqParams& grads) {
    double sum = 0.0;
    grads.for_each([&](const char*, const double* data, Index n) {
        for (Index k = 0; k < n; ++k) {
            sum += data[k] * data[k];
        }
    });
    return std::sqrt(sum);
}

Seq2SeqParams initialize_params(const Seq2SeqDims& dims, std::uint64_t seed) {
    auto params = Seq2SeqParams::zeros(dims);
    SplitMix64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
    params.for_each([&](const char*, double* data, Index n) {
        for (Index k = 0; k < n; ++k) {
            data[k] = rng.uniform(-bound, bound);
        }
    });
    params.encoder.b_gate(Gate::Forget).array() += 1.0;
    params.decoder.b_gate(Gate::Forget).array() += 1.0;
    return params;
}

double dataset_loss(const Seq2SeqDims& dims, const Seq2SeqParams& params, const WindowedDataset& dataset) {
    if (dataset.windows.empty()) {
        throw Error("EMPTY_DATASET", "no windows");
    }
    ForwardCache cache;
    double sum = 0.0;
    for (const auto& w : dataset.windows) {
        seq2seq_forward(dims, params, w.enc, w.dec, cache);
        sum += mse_loss(cache.predictions, w.label);
    }
    return sum / static_cast<double>(dataset.windows.size());
}

TrainResult train(const WindowedDataset& dataset, Index hidden, const TrainConfig& config) {
    if (dataset.windows.empty()) {
        throw Error("EMPTY_DATASET", "no windows to train on");
    }
    const auto& opt_cfg = config.optimizer;
    if (config.epochs < 1 || config.batch_size < 1 || hidden < 1 || !(opt_cfg.lr >= 0.0) || !(opt_cfg.rho >= 0.0) ||
        !(opt_cfg.rho < 1.0) || !(opt_cfg.eps >= 0.0) || !(config.lr_decay > 0.0) ||
        (config.clip_norm && !(*config.clip_norm > 0.0))) {
        throw Error("TRAIN_CONFIG_INVALID",
                    "need epochs >= 1, batch size >= 1, lr >= 0, 0 <= rho < 1, eps >= 0 and a positive clip norm");
    }

    TrainResult result;
    auto& model = result.model;
    model.dims = dataset.dims(hidden);
    model.feature_norm = dataset.feature_norm;
    model.label_norm = dataset.label_norm;
    model.params = initialize_params(model.dims, config.seed);
    model.validate();

    const std::size_t n = dataset.windows.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Shuffling draws from a stream separate from initialization.
    SplitMix64 rng(config.seed ^ 0x5DEECE66DULL);

    auto opt = OptimizerState::for_params(model.params, opt_cfg);
    auto grads = Seq2SeqParams::zeros(model.dims);
    ForwardCache cache;
    std::vector<double> window_loss(n);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) {
            for (std::size_t i = n - 1; i > 0; --i) {
                std::swap(order[i], order[rng.below(i + 1)]);
            }
        }
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t end = std::min(n, start + config.batch_size);
            set_zero(grads);
            for (std::size_t b = start; b < end; ++b) {
                const auto& w = dataset.windows[order[b]];
                seq2seq_forward(model.dims, model.params, w.enc, w.dec, cache);
                window_loss[order[b]] = mse_loss(cache.predictions, w.label);
                bptt_gradients(model.dims, model.params, w, cache, grads);
            }
            scale(grads, 1.0 / static_cast<double>(end - start));
            if (config.clip_norm) {
                const double norm = global_norm(grads);
                if (norm > *config.clip_norm) {
                    scale(grads, *config.clip_norm / norm);
                }
            }
            rmsprop_step(model.params, grads, opt);
            ++result.report.steps;
        }
        double sum = 0.0;
        for (double l : window_loss) {
            sum += l;
        }
        const double mean = sum / static_cast<double>(n);
        if (!std::isfinite(mean)) {
            throw Error("NONFINITE_LOSS", "training diverged in epoch " + std::to_string(epoch + 1));
        }
        result.report.epoch_loss.push_back(mean);
        if (config.on_epoch) {
            config.on_epoch(epoch + 1, mean);
        }
        opt.config.lr *= config.lr_decay;
    }
    return result;
}

}  // namespace hytwin::surrogate
