#pragma once

#include <Eigen/Core>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hytwin/historian.hpp"

namespace hytwin::surrogate {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// --- Normalization ----------------------------------------------------------

/// Per-signal z-score statistics (population standard deviation).
struct NormStats {
    std::vector<std::string> tags;
    std::vector<double> mean;
    std::vector<double> stddev;

    [[nodiscard]] std::size_t size() const noexcept { return tags.size(); }
    [[nodiscard]] double apply(std::size_t i, double x) const { return (x - mean[i]) / stddev[i]; }
    [[nodiscard]] double invert(std::size_t i, double z) const { return z * stddev[i] + mean[i]; }

    friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Throws CONSTANT_SIGNAL naming the tag, or FRAME_TOO_SHORT.
[[nodiscard]] NormStats fit_normalizer(const TimeSeriesFrame& frame, const std::vector<std::string>& tags);

// --- LSTM cell ----------------------------------------------------------------

enum class Gate : Index { Input = 0, Forget = 1, Output = 2, Cell = 3 };

/// Gate weights stacked in blocks of H rows ordered i, f, o, g:
/// W is 4H x F, U is 4H x H, b is 4H.
struct LstmCellParams {
    Matrix W;
    Matrix U;
    Vector b;

    LstmCellParams() = default;
    LstmCellParams(Index inputs, Index hidden);

    [[nodiscard]] Index input_size() const noexcept { return W.cols(); }
    [[nodiscard]] Index hidden_size() const noexcept { return U.cols(); }

    [[nodiscard]] auto W_gate(Gate g) { return W.middleRows(static_cast<Index>(g) * hidden_size(), hidden_size()); }
    [[nodiscard]] auto W_gate(Gate g) const { return W.middleRows(static_cast<Index>(g) * hidden_size(), hidden_size()); }
    [[nodiscard]] auto U_gate(Gate g) { return U.middleRows(static_cast<Index>(g) * hidden_size(), hidden_size()); }
    [[nodiscard]] auto U_gate(Gate g) const { return U.middleRows(static_cast<Index>(g) * hidden_size(), hidden_size()); }
    [[nodiscard]] auto b_gate(Gate g) { return b.segment(static_cast<Index>(g) * hidden_size(), hidden_size()); }
    [[nodiscard]] auto b_gate(Gate g) const { return b.segment(static_cast<Index>(g) * hidden_size(), hidden_size()); }

    friend bool operator==(const LstmCellParams& a, const LstmCellParams& b) {
        return a.W == b.W && a.U == b.U && a.b == b.b;
    }
};

/// Activations of one cell step, kept for backpropagation.
struct CellTrace {
    Vector x, h_prev, c_prev;
    Vector i, f, o, g;
    Vector c, h;
};

/// One LSTM step. Throws SHAPE_MISMATCH.
void lstm_cell_forward(const LstmCellParams& p, const Eigen::Ref<const Vector>& x, const Vector& h_prev,
                       const Vector& c_prev, CellTrace& out);

// --- Encoder-decoder model ----------------------------------------------------

struct Seq2SeqDims {
    Index enc_features = 0;
    Index dec_features = 0;
    Index hidden = 0;
    Index enc_len = 0;
    Index dec_len = 0;
    /// When set, the label is the last encoder column and the output layer
    /// emits per-step increments: y_t = y_last + step_scale * sum_{j<=t} (W h_j + b).
    bool label_feedback = false;
    /// RMS one-step change of the normalized label in the training data.
    double step_scale = 1.0;

    friend bool operator==(const Seq2SeqDims&, const Seq2SeqDims&) = default;
};

struct Seq2SeqParams {
    LstmCellParams encoder;
    LstmCellParams decoder;
    Vector out_w;  // H
    double out_b = 0.0;

    /// Zero parameters of the right shapes.
    static Seq2SeqParams zeros(const Seq2SeqDims& dims);

    /// Calls fn(name, data, size) for every parameter array, in a fixed order.
    template <class Fn>
    void for_each(Fn&& fn) {
        for_each_impl(*this, fn);
    }
    template <class Fn>
    void for_each(Fn&& fn) const {
        for_each_impl(*this, fn);
    }

    [[nodiscard]] std::size_t count() const;

    friend bool operator==(const Seq2SeqParams& a, const Seq2SeqParams& b) {
        return a.encoder == b.encoder && a.decoder == b.decoder && a.out_w == b.out_w && a.out_b == b.out_b;
    }

private:
    template <class Self, class Fn>
    static void for_each_impl(Self& self, Fn& fn) {
        fn("encoder.W", self.encoder.W.data(), self.encoder.W.size());
        fn("encoder.U", self.encoder.U.data(), self.encoder.U.size());
        fn("encoder.b", self.encoder.b.data(), self.encoder.b.size());
        fn("decoder.W", self.decoder.W.data(), self.decoder.W.size());
        fn("decoder.U", self.decoder.U.data(), self.decoder.U.size());
        fn("decoder.b", self.decoder.b.data(), self.decoder.b.size());
        fn("out.W", self.out_w.data(), self.out_w.size());
        fn("out.b", &self.out_b, Index{1});
    }
};

/// Data-driven component model: parameters plus the normalization of its
/// exogenous features and its label.
struct Seq2SeqModel {
    Seq2SeqDims dims;
    Seq2SeqParams params;
    NormStats feature_norm;  // exogenous features, decoder column order
    NormStats label_norm;    // one tag

    [[nodiscard]] const std::vector<std::string>& feature_tags() const { return feature_norm.tags; }
    [[nodiscard]] const std::string& label_tag() const { return label_norm.tags.front(); }

    /// Throws MODEL_INVALID if dims, shapes and norms disagree.
    void validate() const;

    friend bool operator==(const Seq2SeqModel&, const Seq2SeqModel&) = default;
};

/// Zero model (all parameters zero) with the given dims and norms.
[[nodiscard]] Seq2SeqModel make_model(const Seq2SeqDims& dims, NormStats feature_norm, NormStats label_norm);

// --- Windows ------------------------------------------------------------------

struct WindowSpec {
    std::vector<std::string> features;
    std::string label;
    Index enc_len = 30;
    Index dec_len = 10;
    std::size_t stride = 1;
    bool label_feedback = true;
};

/// Default feature set: heater command, pump flow, supply temperature, valve
/// command and tank level; label: tank temperature.
[[nodiscard]] WindowSpec default_window_spec();

/// Normalized training sample: encoder inputs (enc_len x F_enc), decoder
/// inputs (dec_len x F_dec) and labels (dec_len).
struct Window {
    Matrix enc;
    Matrix dec;
    Vector label;
};

struct WindowedDataset {
    WindowSpec spec;
    NormStats feature_norm;
    NormStats label_norm;
    double step_scale = 1.0;
    std::vector<Window> windows;

    [[nodiscard]] Seq2SeqDims dims(Index hidden) const;
};

/// Sliding windows over a fixed-grid frame: window k encodes rows
/// [s, s + enc_len) and decodes rows [s + enc_len, s + enc_len + dec_len),
/// s = k * stride. Throws FRAME_TOO_SHORT or NOT_FIXED_GRID.
[[nodiscard]] WindowedDataset make_windows(const TimeSeriesFrame& frame, const WindowSpec& spec,
                                           const NormStats& feature_norm, const NormStats& label_norm);

/// Raw encoder / decoder matrices for rows of a frame (unnormalized).
[[nodiscard]] Matrix encoder_inputs(const Seq2SeqModel& model, const TimeSeriesFrame& frame, std::span<const Index> rows);
[[nodiscard]] Matrix decoder_inputs(const Seq2SeqModel& model, const TimeSeriesFrame& frame, std::span<const Index> rows);
/// In-place z-scoring of raw matrices with the model's norms.
void normalize_encoder(const Seq2SeqModel& model, Matrix& enc);
void normalize_decoder(const Seq2SeqModel& model, Matrix& dec);

// --- Forward / loss / backward --------------------------------------------------

struct ForwardCache {
    std::vector<CellTrace> encoder;
    std::vector<CellTrace> decoder;
    Vector predictions;
};

/// Runs the encoder from a zero state, hands (h, c) to the decoder and maps
/// every decoder h_t through the output layer (see Seq2SeqDims). Inputs and predictions are in
/// normalized units. Throws SHAPE_MISMATCH.
void seq2seq_forward(const Seq2SeqDims& dims, const Seq2SeqParams& params, const Matrix& enc, const Matrix& dec,
                     ForwardCache& cache);
[[nodiscard]] Vector seq2seq_forward(const Seq2SeqModel& model, const Matrix& enc, const Matrix& dec);

/// (1/T) * sum (pred - target)^2. Throws SHAPE_MISMATCH.
[[nodiscard]] double mse_loss(std::span<const double> pred, std::span<const double> target);
[[nodiscard]] double mse_loss(const Vector& pred, const Vector& target);

/// Exact reverse-mode gradient of mse_loss(forward(window), window.label),
/// accumulated into `grads` (which must have the parameter shapes).
void bptt_gradients(const Seq2SeqDims& dims, const Seq2SeqParams& params, const Window& window,
                    const ForwardCache& cache, Seq2SeqParams& grads);
[[nodiscard]] Seq2SeqParams bptt_gradients(const Seq2SeqDims& dims, const Seq2SeqParams& params, const Window& window);

// --- Prediction -----------------------------------------------------------------

/// Predictions in label units from raw (unnormalized) encoder and decoder
/// matrices.
[[nodiscard]] Vector predict_raw(const Seq2SeqModel& model, const Matrix& enc_raw, const Matrix& dec_raw);

/// Predicts the label over `future`'s first dec_len rows from the last
/// enc_len rows of `history`. Throws FRAME_TOO_SHORT or NOT_FIXED_GRID.
[[nodiscard]] TimeSeriesFrame predict_horizon(const Seq2SeqModel& model, const TimeSeriesFrame& history,
                                              const TimeSeriesFrame& future);

/// Horizon predictor signature: raw encoder rows, raw decoder rows and the
/// decoder timestamps in; dec_len label values out.
using HorizonFn = std::function<std::vector<double>(const Matrix& enc_raw, const Matrix& dec_raw,
                                                    std::span<const double> dec_times)>;

/// Rolling open-loop prediction of the label for every row of a fixed-grid
/// frame. Blocks of dec_len rows are predicted from the enc_len preceding
/// rows of the frame (re-anchored each block); rows before the start of the
/// frame repeat the first row.
[[nodiscard]] std::vector<double> rolling_predictions(const Seq2SeqDims& dims,
                                                      const std::vector<std::string>& feature_tags,
                                                      const std::string& label_tag, const TimeSeriesFrame& frame,
                                                      const HorizonFn& predict);
[[nodiscard]] TimeSeriesFrame predict_rolling(const Seq2SeqModel& model, const TimeSeriesFrame& frame);

}  // namespace hytwin::surrogate
