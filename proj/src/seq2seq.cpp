#include "hytwin/seq2seq.hpp"

#include <cmath>

#include "hytwin/error.hpp"

namespace hytwin::surrogate {

namespace {

[[noreturn]] void shape_mismatch(const std::string& what) { throw Error("SHAPE_MISMATCH", what); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_cell(const LstmCellParams& p, Index inputs, Index hidden, const char* which) {
    if (p.W.rows() != 4 * hidden || p.W.cols() != inputs || p.U.rows() != 4 * hidden || p.U.cols() != hidden ||
        p.b.size() != 4 * hidden) {
        shape_mismatch(std::string(which) + " cell parameters do not match dims");
    }
}

void check_params(const Seq2SeqDims& dims, const Seq2SeqParams& params) {
    check_cell(params.encoder, dims.enc_features, dims.hidden, "encoder");
    check_cell(params.decoder, dims.dec_features, dims.hidden, "decoder");
    if (params.out_w.size() != dims.hidden) {
        shape_mismatch("output layer does not match hidden size");
    }
}

void check_inputs(const Seq2SeqDims& dims, const Matrix& enc, const Matrix& dec) {
    if (enc.rows() != dims.enc_len || enc.cols() != dims.enc_features) {
        shape_mismatch("encoder input is " + std::to_string(enc.rows()) + "x" + std::to_string(enc.cols()) +
                       ", expected " + std::to_string(dims.enc_len) + "x" + std::to_string(dims.enc_features));
    }
    if (dec.rows() != dims.dec_len || dec.cols() != dims.dec_features) {
        shape_mismatch("decoder input is " + std::to_string(dec.rows()) + "x" + std::to_string(dec.cols()) +
                       ", expected " + std::to_string(dims.dec_len) + "x" + std::to_string(dims.dec_features));
    }
}

// Backward through one cell step. dh/dc are gradients w.r.t. this step's
// outputs; dh_prev/dc_prev receive gradients w.r.t. its inputs.
void lstm_cell_backward(const LstmCellParams& p, const CellTrace& tr, const Vector& dh, const Vector& dc_in,
                        LstmCellParams& grad, Vector& dh_prev, Vector& dc_prev, Vector& da) {
    const Index H = p.hidden_size();
    const auto tc = tr.c.array().tanh().eval();
    const auto dc = (dc_in.array() + dh.array() * tr.o.array() * (1.0 - tc.square())).eval();

    da.resize(4 * H);
    da.segment(0 * H, H) = (dc * tr.g.array() * tr.i.array() * (1.0 - tr.i.array())).matrix();
    da.segment(1 * H, H) = (dc * tr.c_prev.array() * tr.f.array() * (1.0 - tr.f.array())).matrix();
    da.segment(2 * H, H) = (dh.array() * tc * tr.o.array() * (1.0 - tr.o.array())).matrix();
    da.segment(3 * H, H) = (dc * tr.i.array() * (1.0 - tr.g.array().square())).matrix();

    grad.W.noalias() += da * tr.x.transpose();
    grad.U.noalias() += da * tr.h_prev.transpose();
    grad.b += da;
    dh_prev.noalias() = p.U.transpose() * da;
    dc_prev = (dc * tr.f.array()).matrix();
}

}  // namespace

NormStats fit_normalizer(const TimeSeriesFrame& frame, const std::vector<std::string>& tags) {
    if (frame.rows() < 2) {
        throw Error("FRAME_TOO_SHORT", "normalization needs at least two samples");
    }
    NormStats out;
    for (const auto& tag : tags) {
        const auto values = frame.column(tag);
        double mean = 0.0;
        for (double v : values) {
            mean += v;
        }
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(values.size());
        const double sd = std::sqrt(var);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            throw Error("CONSTANT_SIGNAL", tag);
        }
        out.tags.push_back(tag);
        out.mean.push_back(mean);
        out.stddev.push_back(sd);
    }
    return out;
}

LstmCellParams::LstmCellParams(Index inputs, Index hidden)
    : W(Matrix::Zero(4 * hidden, inputs)), U(Matrix::Zero(4 * hidden, hidden)), b(Vector::Zero(4 * hidden)) {}

void lstm_cell_forward(const LstmCellParams& p, const Eigen::Ref<const Vector>& x, const Vector& h_prev,
                       const Vector& c_prev, CellTrace& out) {
    const Index H = p.hidden_size();
    if (x.size() != p.input_size() || h_prev.size() != H || c_prev.size() != H || p.W.rows() != 4 * H ||
        p.b.size() != 4 * H) {
        shape_mismatch("LSTM cell inputs do not match parameters");
    }
    thread_local Vector a;
    a = p.b;
    a.noalias() += p.W * x;
    a.noalias() += p.U * h_prev;

    out.x = x;
    out.h_prev = h_prev;
    out.c_prev = c_prev;
    out.i = a.segment(0 * H, H).unaryExpr(&sigmoid);
    out.f = a.segment(1 * H, H).unaryExpr(&sigmoid);
    out.o = a.segment(2 * H, H).unaryExpr(&sigmoid);
    out.g = a.segment(3 * H, H).array().tanh().matrix();
    out.c = (out.f.array() * c_prev.array() + out.i.array() * out.g.array()).matrix();
    out.h = (out.o.array() * out.c.array().tanh()).matrix();
}

Seq2SeqParams Seq2SeqParams::zeros(const Seq2SeqDims& dims) {
    Seq2SeqParams p;
    p.encoder = LstmCellParams(dims.enc_features, dims.hidden);
    p.decoder = LstmCellParams(dims.dec_features, dims.hidden);
    p.out_w = Vector::Zero(dims.hidden);
    p.out_b = 0.0;
    return p;
}

std::size_t Seq2SeqParams::count() const {
    std::size_t n = 0;
    for_each([&](const char*, const double*, Index size) { n += static_cast<std::size_t>(size); });
    return n;
}

void Seq2SeqModel::validate() const {
    auto invalid = [](const std::string& what) { throw Error("MODEL_INVALID", what); };
    if (dims.enc_features < 1 || dims.dec_features < 1 || dims.hidden < 1 || dims.enc_len < 1 || dims.dec_len < 1) {
        invalid("all dims must be positive");
    }
    if (!(dims.step_scale > 0.0) || !std::isfinite(dims.step_scale)) {
        invalid("step scale must be positive and finite");
    }
    if (dims.enc_features != dims.dec_features + (dims.label_feedback ? 1 : 0)) {
        invalid("encoder features must be the decoder features" +
                std::string(dims.label_feedback ? " plus the label" : ""));
    }
    if (static_cast<Index>(feature_norm.size()) != dims.dec_features || feature_norm.mean.size() != feature_norm.size() ||
        feature_norm.stddev.size() != feature_norm.size()) {
        invalid("feature normalization does not match decoder features");
    }
    if (label_norm.size() != 1 || label_norm.mean.size() != 1 || label_norm.stddev.size() != 1) {
        invalid("label normalization must cover exactly one tag");
    }
    for (const auto* n : {&feature_norm, &label_norm}) {
        for (std::size_t i = 0; i < n->size(); ++i) {
            if (!std::isfinite(n->mean[i]) || !(n->stddev[i] > 0.0) || !std::isfinite(n->stddev[i])) {
                invalid("normalization of " + n->tags[i] + " needs finite mean and positive deviation");
            }
        }
    }
    try {
        check_params(dims, params);
    } catch (const Error& e) {
        invalid(e.what());
    }
    bool finite = true;
    params.for_each([&](const char*, const double* data, Index size) {
        for (Index k = 0; k < size; ++k) {
            finite = finite && std::isfinite(data[k]);
        }
    });
    if (!finite) {
        invalid("non-finite parameter");
    }
}

Seq2SeqModel make_model(const Seq2SeqDims& dims, NormStats feature_norm, NormStats label_norm) {
    Seq2SeqModel m;
    m.dims = dims;
    m.params = Seq2SeqParams::zeros(dims);
    m.feature_norm = std::move(feature_norm);
    m.label_norm = std::move(label_norm);
    m.validate();
    return m;
}

WindowSpec default_window_spec() {
    WindowSpec spec;
    spec.features = {"E100.u", "P100.mdot", "SRC.Tin", "V106.u", "T100.level"};
    spec.label = "T100.T";
    spec.enc_len = 30;
    spec.dec_len = 10;
    spec.stride = 1;
    spec.label_feedback = true;
    return spec;
}

Seq2SeqDims WindowedDataset::dims(Index hidden) const {
    Seq2SeqDims d;
    d.dec_features = static_cast<Index>(spec.features.size());
    d.enc_features = d.dec_features + (spec.label_feedback ? 1 : 0);
    d.hidden = hidden;
    d.enc_len = spec.enc_len;
    d.dec_len = spec.dec_len;
    d.label_feedback = spec.label_feedback;
    d.step_scale = step_scale;
    return d;
}

WindowedDataset make_windows(const TimeSeriesFrame& frame, const WindowSpec& spec, const NormStats& feature_norm,
                             const NormStats& label_norm) {
    if (spec.enc_len < 1 || spec.dec_len < 1 || spec.stride < 1 || spec.features.empty()) {
        throw Error("WINDOW_SPEC_INVALID", "window lengths, stride and feature list must be positive");
    }
    if (feature_norm.tags != spec.features || label_norm.tags != std::vector<std::string>{spec.label}) {
        throw Error("NORM_MISMATCH", "normalization statistics do not cover the window tags");
    }
    const auto span = static_cast<std::size_t>(spec.enc_len + spec.dec_len);
    if (frame.rows() < span) {
        throw Error("FRAME_TOO_SHORT", std::to_string(frame.rows()) + " rows, need " + std::to_string(span));
    }
    if (!fixed_step(frame)) {
        throw Error("NOT_FIXED_GRID", "windows need uniformly sampled rows");
    }
    std::vector<std::size_t> cols;
    for (const auto& tag : spec.features) {
        cols.push_back(frame.index_of(tag));
    }
    const std::size_t label_col = frame.index_of(spec.label);
    const auto F = static_cast<Index>(cols.size());
    const Index F_enc = F + (spec.label_feedback ? 1 : 0);

    WindowedDataset out{spec, feature_norm, label_norm, 1.0, {}};
    if (spec.label_feedback) {
        double sq = 0.0;
        for (std::size_t r = 1; r < frame.rows(); ++r) {
            const double d = label_norm.apply(0, frame.at(r, label_col)) - label_norm.apply(0, frame.at(r - 1, label_col));
            sq += d * d;
        }
        const double rms = std::sqrt(sq / static_cast<double>(frame.rows() - 1));
        if (rms > 0.0) {
            out.step_scale = rms;
        }
    }
    const std::size_t count = (frame.rows() - span) / spec.stride + 1;
    out.windows.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t s = k * spec.stride;
        Window w{Matrix(spec.enc_len, F_enc), Matrix(spec.dec_len, F), Vector(spec.dec_len)};
        for (Index t = 0; t < spec.enc_len; ++t) {
            const std::size_t r = s + static_cast<std::size_t>(t);
            for (Index j = 0; j < F; ++j) {
                w.enc(t, j) = feature_norm.apply(static_cast<std::size_t>(j), frame.at(r, cols[static_cast<std::size_t>(j)]));
            }
            if (spec.label_feedback) {
                w.enc(t, F) = label_norm.apply(0, frame.at(r, label_col));
            }
        }
        for (Index t = 0; t < spec.dec_len; ++t) {
            const std::size_t r = s + static_cast<std::size_t>(spec.enc_len + t);
            for (Index j = 0; j < F; ++j) {
                w.dec(t, j) = feature_norm.apply(static_cast<std::size_t>(j), frame.at(r, cols[static_cast<std::size_t>(j)]));
            }
            w.label(t) = label_norm.apply(0, frame.at(r, label_col));
        }
        out.windows.push_back(std::move(w));
    }
    return out;
}

Matrix encoder_inputs(const Seq2SeqModel& model, const TimeSeriesFrame& frame, std::span<const Index> rows) {
    const auto& tags = model.feature_tags();
    Matrix out(static_cast<Index>(rows.size()), model.dims.enc_features);
    std::vector<std::size_t> cols;
    for (const auto& tag : tags) {
        cols.push_back(frame.index_of(tag));
    }
    if (model.dims.label_feedback) {
        cols.push_back(frame.index_of(model.label_tag()));
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            out(static_cast<Index>(r), static_cast<Index>(c)) = frame.at(static_cast<std::size_t>(rows[r]), cols[c]);
        }
    }
    return out;
}

Matrix decoder_inputs(const Seq2SeqModel& model, const TimeSeriesFrame& frame, std::span<const Index> rows) {
    const auto& tags = model.feature_tags();
    Matrix out(static_cast<Index>(rows.size()), model.dims.dec_features);
    for (std::size_t c = 0; c < tags.size(); ++c) {
        const std::size_t col = frame.index_of(tags[c]);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            out(static_cast<Index>(r), static_cast<Index>(c)) = frame.at(static_cast<std::size_t>(rows[r]), col);
        }
    }
    return out;
}

void normalize_encoder(const Seq2SeqModel& model, Matrix& enc) {
    const auto F = static_cast<Index>(model.feature_norm.size());
    if (enc.cols() != model.dims.enc_features) {
        shape_mismatch("encoder matrix has the wrong number of columns");
    }
    for (Index r = 0; r < enc.rows(); ++r) {
        for (Index c = 0; c < F; ++c) {
            enc(r, c) = model.feature_norm.apply(static_cast<std::size_t>(c), enc(r, c));
        }
        if (model.dims.label_feedback) {
            enc(r, F) = model.label_norm.apply(0, enc(r, F));
        }
    }
}

void normalize_decoder(const Seq2SeqModel& model, Matrix& dec) {
    if (dec.cols() != model.dims.dec_features) {
        shape_mismatch("decoder matrix has the wrong number of columns");
    }
    for (Index r = 0; r < dec.rows(); ++r) {
        for (Index c = 0; c < dec.cols(); ++c) {
            dec(r, c) = model.feature_norm.apply(static_cast<std::size_t>(c), dec(r, c));
        }
    }
}

void seq2seq_forward(const Seq2SeqDims& dims, const Seq2SeqParams& params, const Matrix& enc, const Matrix& dec,
                     ForwardCache& cache) {
    check_params(dims, params);
    check_inputs(dims, enc, dec);
    const Index H = dims.hidden;
    cache.encoder.resize(static_cast<std::size_t>(dims.enc_len));
    cache.decoder.resize(static_cast<std::size_t>(dims.dec_len));
    cache.predictions.resize(dims.dec_len);

    const Vector zero = Vector::Zero(H);
    const Vector* h = &zero;
    const Vector* c = &zero;
    for (Index t = 0; t < dims.enc_len; ++t) {
        auto& tr = cache.encoder[static_cast<std::size_t>(t)];
        lstm_cell_forward(params.encoder, enc.row(t).transpose(), *h, *c, tr);
        h = &tr.h;
        c = &tr.c;
    }
    const double anchor = dims.label_feedback ? enc(dims.enc_len - 1, dims.enc_features - 1) : 0.0;
    double sum = 0.0;
    for (Index t = 0; t < dims.dec_len; ++t) {
        auto& tr = cache.decoder[static_cast<std::size_t>(t)];
        lstm_cell_forward(params.decoder, dec.row(t).transpose(), *h, *c, tr);
        h = &tr.h;
        c = &tr.c;
        const double out = params.out_w.dot(tr.h) + params.out_b;
        if (dims.label_feedback) {
            sum += out;
            cache.predictions(t) = anchor + dims.step_scale * sum;
        } else {
            cache.predictions(t) = out;
        }
    }
}

Vector seq2seq_forward(const Seq2SeqModel& model, const Matrix& enc, const Matrix& dec) {
    ForwardCache cache;
    seq2seq_forward(model.dims, model.params, enc, dec, cache);
    return cache.predictions;
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size() || pred.empty()) {
        shape_mismatch("loss needs equal, non-empty prediction and target lengths");
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        const double e = pred[t] - target[t];
        sum += e * e;
    }
    return sum / static_cast<double>(pred.size());
}

double mse_loss(const Vector& pred, const Vector& target) {
    return mse_loss(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                    std::span<const double>(target.data(), static_cast<std::size_t>(target.size())));
}

void bptt_gradients(const Seq2SeqDims& dims, const Seq2SeqParams& params, const Window& window,
                    const ForwardCache& cache, Seq2SeqParams& grads) {
    check_params(dims, params);
    check_params(dims, grads);
    if (window.label.size() != dims.dec_len || cache.predictions.size() != dims.dec_len ||
        cache.encoder.size() != static_cast<std::size_t>(dims.enc_len) ||
        cache.decoder.size() != static_cast<std::size_t>(dims.dec_len)) {
        shape_mismatch("forward cache or labels do not match dims");
    }
    const Index H = dims.hidden;
    thread_local Vector dh, dc, dh_prev, dc_prev, da;
    dh.setZero(H);
    dc.setZero(H);
    const double scale = 2.0 / static_cast<double>(dims.dec_len);

    double dsum = 0.0;  // gradient w.r.t. the running increment sum
    for (Index t = dims.dec_len - 1; t >= 0; --t) {
        const auto& tr = cache.decoder[static_cast<std::size_t>(t)];
        double dy = scale * (cache.predictions(t) - window.label(t));
        if (dims.label_feedback) {
            dsum += dy;
            dy = dims.step_scale * dsum;
        }
        grads.out_w.noalias() += dy * tr.h;
        grads.out_b += dy;
        dh.noalias() += dy * params.out_w;
        lstm_cell_backward(params.decoder, tr, dh, dc, grads.decoder, dh_prev, dc_prev, da);
        std::swap(dh, dh_prev);
        std::swap(dc, dc_prev);
    }
    for (Index t = dims.enc_len - 1; t >= 0; --t) {
        const auto& tr = cache.encoder[static_cast<std::size_t>(t)];
        lstm_cell_backward(params.encoder, tr, dh, dc, grads.encoder, dh_prev, dc_prev, da);
        std::swap(dh, dh_prev);
        std::swap(dc, dc_prev);
    }
}

Seq2SeqParams bptt_gradients(const Seq2SeqDims& dims, const Seq2SeqParams& params, const Window& window) {
    ForwardCache cache;
    seq2seq_forward(dims, params, window.enc, window.dec, cache);
    auto grads = Seq2SeqParams::zeros(dims);
    bptt_gradients(dims, params, window, cache, grads);
    return grads;
}

Vector predict_raw(const Seq2SeqModel& model, const Matrix& enc_raw, const Matrix& dec_raw) {
    Matrix enc = enc_raw;
    Matrix dec = dec_raw;
    normalize_encoder(model, enc);
    normalize_decoder(model, dec);
    Vector y = seq2seq_forward(model, enc, dec);
    for (Index t = 0; t < y.size(); ++t) {
        y(t) = model.label_norm.invert(0, y(t));
    }
    return y;
}

TimeSeriesFrame predict_horizon(const Seq2SeqModel& model, const TimeSeriesFrame& history,
                                const TimeSeriesFrame& future) {
    const auto& d = model.dims;
    if (history.rows() < static_cast<std::size_t>(d.enc_len) || future.rows() < static_cast<std::size_t>(d.dec_len)) {
        throw Error("FRAME_TOO_SHORT", "history needs " + std::to_string(d.enc_len) + " rows and future " +
                                           std::to_string(d.dec_len) + " rows");
    }
    const auto h_step = fixed_step(history);
    const auto f_step = fixed_step(future);
    if ((history.rows() > 1 && !h_step) || (future.rows() > 1 && !f_step) ||
        (h_step && f_step && std::abs(*h_step - *f_step) > 1e-9 * *h_step)) {
        throw Error("NOT_FIXED_GRID", "history and future must share one uniform grid");
    }
    std::vector<Index> enc_rows(static_cast<std::size_t>(d.enc_len));
    for (Index t = 0; t < d.enc_len; ++t) {
        enc_rows[static_cast<std::size_t>(t)] = static_cast<Index>(history.rows()) - d.enc_len + t;
    }
    std::vector<Index> dec_rows(static_cast<std::size_t>(d.dec_len));
    for (Index t = 0; t < d.dec_len; ++t) {
        dec_rows[static_cast<std::size_t>(t)] = t;
    }
    const Vector y = predict_raw(model, encoder_inputs(model, history, enc_rows), decoder_inputs(model, future, dec_rows));
    std::vector<double> times(future.times().begin(), future.times().begin() + d.dec_len);
    return TimeSeriesFrame({model.label_tag()}, std::move(times), std::vector<double>(y.data(), y.data() + y.size()));
}

std::vector<double> rolling_predictions(const Seq2SeqDims& dims, const std::vector<std::string>& feature_tags,
                                        const std::string& label_tag, const TimeSeriesFrame& frame,
                                        const HorizonFn& predict) {
    const auto step = fixed_step(frame);
    if (!step) {
        throw Error("NOT_FIXED_GRID", "rolling prediction needs a uniformly sampled frame");
    }
    std::vector<std::size_t> cols;
    for (const auto& tag : feature_tags) {
        cols.push_back(frame.index_of(tag));
    }
    const std::size_t label_col = frame.index_of(label_tag);
    const auto F = static_cast<Index>(cols.size());
    const auto N = static_cast<Index>(frame.rows());
    const auto times = frame.times();

    std::vector<double> out;
    out.reserve(frame.rows());
    Matrix enc(dims.enc_len, F + (dims.label_feedback ? 1 : 0));
    Matrix dec(dims.dec_len, F);
    std::vector<double> dec_times(static_cast<std::size_t>(dims.dec_len));
    for (Index s = 0; s < N; s += dims.dec_len) {
        for (Index t = 0; t < dims.enc_len; ++t) {
            const auto r = static_cast<std::size_t>(std::max<Index>(0, s - dims.enc_len + t));
            for (Index j = 0; j < F; ++j) {
                enc(t, j) = frame.at(r, cols[static_cast<std::size_t>(j)]);
            }
            if (dims.label_feedback) {
                enc(t, F) = frame.at(r, label_col);
            }
        }
        for (Index t = 0; t < dims.dec_len; ++t) {
            const Index virtual_row = s + t;
            const auto r = static_cast<std::size_t>(std::min(virtual_row, N - 1));
            for (Index j = 0; j < F; ++j) {
                dec(t, j) = frame.at(r, cols[static_cast<std::size_t>(j)]);
            }
            dec_times[static_cast<std::size_t>(t)] =
                virtual_row < N ? times[r] : times.back() + static_cast<double>(virtual_row - (N - 1)) * *step;
        }
        const auto y = predict(enc, dec, dec_times);
        if (static_cast<Index>(y.size()) != dims.dec_len) {
            shape_mismatch("predictor returned " + std::to_string(y.size()) + " values");
        }
        for (Index t = 0; t < dims.dec_len && s + t < N; ++t) {
            out.push_back(y[static_cast<std::size_t>(t)]);
        }
    }
    return out;
}

TimeSeriesFrame predict_rolling(const Seq2SeqModel& model, const TimeSeriesFrame& frame) {
    auto values = rolling_predictions(model.dims, model.feature_tags(), model.label_tag(), frame,
                                      [&](const Matrix& enc, const Matrix& dec, std::span<const double>) {
                                          const Vector y = predict_raw(model, enc, dec);
                                          return std::vector<double>(y.data(), y.data() + y.size());
                                      });
    return TimeSeriesFrame({model.label_tag()}, std::vector<double>(frame.times().begin(), frame.times().end()),
                           std::move(values));
}

}  // namespace hytwin::surrogate
