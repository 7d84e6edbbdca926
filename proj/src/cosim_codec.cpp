#include <json.hpp>

#include "hytwin/cosim.hpp"
#include "hytwin/error.hpp"

namespace hytwin::cosim {

namespace {

using json = nlohmann::json;

[[noreturn]] void malformed(const std::string& what) { throw Error("PROTO_MALFORMED", what); }

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (surrogate::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (surrogate::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

const json& field(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        malformed(std::string("missing field \"") + key + "\"");
    }
    return *it;
}

std::int64_t integer(const json& obj, const char* key) {
    const auto& v = field(obj, key);
    if (!v.is_number_integer()) {
        malformed(std::string("field \"") + key + "\" must be an integer");
    }
    return v.get<std::int64_t>();
}

std::string text(const json& obj, const char* key) {
    const auto& v = field(obj, key);
    if (!v.is_string()) {
        malformed(std::string("field \"") + key + "\" must be a string");
    }
    return v.get<std::string>();
}

std::vector<double> numbers(const json& v, const char* key) {
    if (!v.is_array()) {
        malformed(std::string("field \"") + key + "\" must be an array of numbers");
    }
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) {
        if (!x.is_number()) {
            malformed(std::string("field \"") + key + "\" holds a non-number");
        }
        out.push_back(x.get<double>());
    }
    return out;
}

Matrix matrix(const json& obj, const char* key) {
    const auto& v = field(obj, key);
    if (!v.is_array() || v.empty()) {
        malformed(std::string("field \"") + key + "\" must be a non-empty array of rows");
    }
    std::size_t cols = 0;
    Matrix m;
    for (std::size_t r = 0; r < v.size(); ++r) {
        const auto row = numbers(v[r], key);
        if (r == 0) {
            cols = row.size();
            if (cols == 0) {
                malformed(std::string("field \"") + key + "\" has an empty row");
            }
            m.resize(static_cast<surrogate::Index>(v.size()), static_cast<surrogate::Index>(cols));
        } else if (row.size() != cols) {
            malformed(std::string("field \"") + key + "\" is ragged at row " + std::to_string(r));
        }
        for (std::size_t c = 0; c < cols; ++c) {
            m(static_cast<surrogate::Index>(r), static_cast<surrogate::Index>(c)) = row[c];
        }
    }
    return m;
}

struct Encoder {
    json operator()(const Hello& m) const {
        return {{"type", "hello"},        {"version", m.version}, {"features", m.features},
                {"label", m.label},       {"enc_len", m.enc_len}, {"dec_len", m.dec_len},
                {"label_feedback", m.label_feedback}};
    }
    json operator()(const HelloAck& m) const { return {{"type", "hello_ack"}, {"version", m.version}}; }
    json operator()(const Predict& m) const {
        return {{"type", "predict"}, {"seq", m.seq}, {"enc", matrix_to_json(m.enc)}, {"dec", matrix_to_json(m.dec)}};
    }
    json operator()(const Prediction& m) const { return {{"type", "prediction"}, {"seq", m.seq}, {"y", m.y}}; }
    json operator()(const ErrorMsg& m) const { return {{"type", "error"}, {"code", m.code}, {"detail", m.detail}}; }
    json operator()(const Shutdown&) const { return {{"type", "shutdown"}}; }
};

}  // namespace

std::string encode(const Message& msg) {
    return std::visit(Encoder{}, msg).dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

Message decode(std::string_view line) {
    if (!line.empty() && line.back() == '\n') {
        line.remove_suffix(1);
    }
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        malformed("invalid JSON at byte " + std::to_string(e.byte));
    }
    if (!obj.is_object()) {
        malformed("message is not a JSON object");
    }
    const std::string type = text(obj, "type");
    if (type == "hello") {
        Hello m;
        const auto version = integer(obj, "version");
        if (version < INT32_MIN || version > INT32_MAX) {
            malformed("version out of range");
        }
        m.version = static_cast<int>(version);
        const auto& features = field(obj, "features");
        if (!features.is_array()) {
            malformed("field \"features\" must be an array of strings");
        }
        for (const auto& f : features) {
            if (!f.is_string()) {
                malformed("field \"features\" holds a non-string");
            }
            m.features.push_back(f.get<std::string>());
        }
        m.label = text(obj, "label");
        m.enc_len = integer(obj, "enc_len");
        m.dec_len = integer(obj, "dec_len");
        if (auto it = obj.find("label_feedback"); it != obj.end()) {
            if (!it->is_boolean()) {
                malformed("field \"label_feedback\" must be a boolean");
            }
            m.label_feedback = it->get<bool>();
        }
        return m;
    }
    if (type == "hello_ack") {
        const auto version = integer(obj, "version");
        if (version < INT32_MIN || version > INT32_MAX) {
            malformed("version out of range");
        }
        return HelloAck{static_cast<int>(version)};
    }
    if (type == "predict") {
        return Predict{integer(obj, "seq"), matrix(obj, "enc"), matrix(obj, "dec")};
    }
    if (type == "prediction") {
        return Prediction{integer(obj, "seq"), numbers(field(obj, "y"), "y")};
    }
    if (type == "error") {
        return ErrorMsg{text(obj, "code"), text(obj, "detail")};
    }
    if (type == "shutdown") {
        return Shutdown{};
    }
    malformed("unknown message type \"" + type + "\"");
}

Hello hello_for(const surrogate::Seq2SeqModel& model) {
    Hello h;
    h.features = model.feature_tags();
    h.label = model.label_tag();
    h.enc_len = model.dims.enc_len;
    h.dec_len = model.dims.dec_len;
    h.label_feedback = model.dims.label_feedback;
    return h;
}

}  // namespace hytwin::cosim
