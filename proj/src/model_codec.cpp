#include "hytwin/model_codec.hpp"

#include <cstdio>
#include <cstring>
#include <json.hpp>

#include "hytwin/error.hpp"

namespace hytwin::surrogate {

namespace {

using json = nlohmann::json;

constexpr std::pair<Gate, const char*> gates[] = {
    {Gate::Input, "i"}, {Gate::Forget, "f"}, {Gate::Output, "o"}, {Gate::Cell, "g"}};

[[noreturn]] void malformed(const std::string& what) { throw Error("MODEL_MALFORMED", what); }

json flatten(const Eigen::Ref<const Matrix>& m) {
    json out = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            out.push_back(m(r, c));
        }
    }
    return out;
}

json cell_to_json(const LstmCellParams& p) {
    json out = json::object();
    for (const auto& [gate, name] : gates) {
        out[std::string("W_") + name] = flatten(p.W_gate(gate));
    }
    for (const auto& [gate, name] : gates) {
        out[std::string("U_") + name] = flatten(p.U_gate(gate));
    }
    for (const auto& [gate, name] : gates) {
        out[std::string("b_") + name] = flatten(p.b_gate(gate));
    }
    return out;
}

json norm_to_json(const NormStats& n) { return {{"tags", n.tags}, {"mean", n.mean}, {"std", n.stddev}}; }

const json& member(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) {
        malformed(where + " lacks \"" + key + "\"");
    }
    return obj.at(key);
}

Index dim(const json& dims, const char* key) {
    const auto& v = member(dims, key, "dims");
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1 || v.get<std::int64_t>() > 1'000'000) {
        malformed(std::string("dims.") + key + " must be a positive integer");
    }
    return static_cast<Index>(v.get<std::int64_t>());
}

std::vector<double> numbers(const json& v, const std::string& where) {
    if (!v.is_array()) {
        malformed(where + " must be an array");
    }
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) {
        if (!x.is_number()) {
            malformed(where + " holds a non-number");
        }
        out.push_back(x.get<double>());
    }
    return out;
}

template <class Block>
void fill(Block&& block, const json& v, const std::string& where) {
    const auto values = numbers(v, where);
    if (static_cast<Index>(values.size()) != block.rows() * block.cols()) {
        malformed(where + " has " + std::to_string(values.size()) + " entries, expected " +
                  std::to_string(block.rows() * block.cols()));
    }
    std::size_t k = 0;
    for (Index r = 0; r < block.rows(); ++r) {
        for (Index c = 0; c < block.cols(); ++c) {
            block(r, c) = values[k++];
        }
    }
}

void cell_from_json(LstmCellParams& p, const json& obj, const std::string& where) {
    for (const auto& [gate, name] : gates) {
        fill(p.W_gate(gate), member(obj, (std::string("W_") + name).c_str(), where), where + ".W_" + name);
        fill(p.U_gate(gate), member(obj, (std::string("U_") + name).c_str(), where), where + ".U_" + name);
        fill(p.b_gate(gate), member(obj, (std::string("b_") + name).c_str(), where), where + ".b_" + name);
    }
}

NormStats norm_from_json(const json& obj, const std::string& where) {
    NormStats n;
    const auto& tags = member(obj, "tags", where);
    if (!tags.is_array()) {
        malformed(where + ".tags must be an array");
    }
    for (const auto& t : tags) {
        if (!t.is_string()) {
            malformed(where + ".tags holds a non-string");
        }
        n.tags.push_back(t.get<std::string>());
    }
    n.mean = numbers(member(obj, "mean", where), where + ".mean");
    n.stddev = numbers(member(obj, "std", where), where + ".std");
    if (n.mean.size() != n.tags.size() || n.stddev.size() != n.tags.size()) {
        malformed(where + " arrays differ in length");
    }
    return n;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::uint64_t parameter_checksum(const Seq2SeqParams& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    params.for_each([&](const char*, const double* data, Index n) {
        for (Index k = 0; k < n; ++k) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &data[k], sizeof bytes);
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001b3ULL;
            }
        }
    });
    return h;
}

std::string save_model(const Seq2SeqModel& model) {
    model.validate();
    const auto& d = model.dims;
    json doc = json::object();
    doc["format"] = "hytwin-lstm";
    doc["version"] = model_format_version;
    doc["dims"] = {{"enc_features", d.enc_features}, {"dec_features", d.dec_features}, {"hidden", d.hidden},
                   {"enc_len", d.enc_len},           {"dec_len", d.dec_len},           {"label_feedback", d.label_feedback},
                   {"step_scale", d.step_scale}};
    doc["norm"] = {{"features", norm_to_json(model.feature_norm)}, {"label", norm_to_json(model.label_norm)}};
    doc["encoder"] = cell_to_json(model.params.encoder);
    doc["decoder"] = cell_to_json(model.params.decoder);
    doc["out"] = {{"W", flatten(model.params.out_w.transpose())}, {"b", json::array({model.params.out_b})}};
    doc["checksum"] = hex64(parameter_checksum(model.params));
    return doc.dump() + "\n";
}

Seq2SeqModel load_model(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        malformed(std::string("not a JSON document at byte ") + std::to_string(e.byte));
    }
    const std::string root = "model";
    if (member(doc, "format", root) != "hytwin-lstm") {
        malformed("format is not hytwin-lstm");
    }
    const auto& version = member(doc, "version", root);
    if (!version.is_number_integer() || version.get<std::int64_t>() != model_format_version) {
        malformed("unsupported version " + version.dump());
    }
    const auto& dims = member(doc, "dims", root);
    Seq2SeqModel m;
    m.dims.enc_features = dim(dims, "enc_features");
    m.dims.dec_features = dim(dims, "dec_features");
    m.dims.hidden = dim(dims, "hidden");
    m.dims.enc_len = dim(dims, "enc_len");
    m.dims.dec_len = dim(dims, "dec_len");
    const auto& feedback = member(dims, "label_feedback", "dims");
    if (!feedback.is_boolean()) {
        malformed("dims.label_feedback must be a boolean");
    }
    m.dims.label_feedback = feedback.get<bool>();
    const auto& step_scale = member(dims, "step_scale", "dims");
    if (!step_scale.is_number()) {
        malformed("dims.step_scale must be a number");
    }
    m.dims.step_scale = step_scale.get<double>();

    const auto& norm = member(doc, "norm", root);
    m.feature_norm = norm_from_json(member(norm, "features", "norm"), "norm.features");
    m.label_norm = norm_from_json(member(norm, "label", "norm"), "norm.label");

    m.params = Seq2SeqParams::zeros(m.dims);
    cell_from_json(m.params.encoder, member(doc, "encoder", root), "encoder");
    cell_from_json(m.params.decoder, member(doc, "decoder", root), "decoder");
    const auto& out = member(doc, "out", root);
    fill(m.params.out_w, member(out, "W", "out"), "out.W");
    const auto b = numbers(member(out, "b", "out"), "out.b");
    if (b.size() != 1) {
        malformed("out.b must hold one value");
    }
    m.params.out_b = b.front();

    const auto& checksum = member(doc, "checksum", root);
    if (!checksum.is_string() || checksum.get<std::string>() != hex64(parameter_checksum(m.params))) {
        malformed("checksum does not match parameters");
    }
    try {
        m.validate();
    } catch (const Error& e) {
        malformed(e.what());
    }
    return m;
}

void save_model_file(const std::string& path, const Seq2SeqModel& model) { write_text_file(path, save_model(model)); }

Seq2SeqModel load_model_file(const std::string& path) { return load_model(read_text_file(path)); }

}  // namespace hytwin::surrogate
