#include "seqmask/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "seqmask/errors.hpp"

namespace seqmask {

using nlohmann::json;

std::vector<std::string> Dataset::domains() const {
    std::vector<std::string> out;
    for (const auto& s : samples)
        if (std::find(out.begin(), out.end(), s.domain) == out.end()) out.push_back(s.domain);
    return out;
}

Dataset Dataset::filter(const std::vector<std::string>& keep) const {
    Dataset out;
    for (const auto& s : samples)
        if (std::find(keep.begin(), keep.end(), s.domain) != keep.end()) out.samples.push_back(s);
    return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.samples.reserve(indices.size());
    for (auto i : indices) out.samples.push_back(samples.at(i));
    return out;
}

std::map<int, std::size_t> Dataset::label_counts() const {
    std::map<int, std::size_t> counts;
    for (const auto& s : samples) ++counts[s.label];
    return counts;
}

void Dataset::validate(int classes) const {
    if (samples.empty()) return;
    const auto& first = samples.front();
    for (const auto& s : samples) {
        if (s.text.rows != first.text.rows || s.text.cols != first.text.cols || s.video.rows != first.video.rows ||
            s.video.cols != first.video.cols) {
            throw DimensionError("sample '" + s.id + "' has feature shapes that differ from sample '" + first.id +
                                 "'");
        }
        if (s.label < 0 || s.label >= classes) {
            throw InputError("sample '" + s.id + "' has label " + std::to_string(s.label) + " outside [0," +
                             std::to_string(classes) + ")");
        }
    }
}

namespace {

json matrix_to_json(const FeatureMatrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

FeatureMatrix matrix_from_json(const json& j, const std::string& field, std::size_t line) {
    auto fail = [&](const std::string& what) {
        throw FormatError("line " + std::to_string(line) + ": field '" + field + "' " + what);
    };
    if (!j.is_array() || j.empty()) fail("must be a nonempty array of rows");
    FeatureMatrix m;
    m.rows = j.size();
    if (!j[0].is_array() || j[0].empty()) fail("rows must be nonempty arrays");
    m.cols = j[0].size();
    m.values.reserve(m.rows * m.cols);
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != m.cols) fail("is ragged");
        for (const auto& v : row) {
            if (!v.is_number()) fail("contains a non-numeric entry");
            m.values.push_back(v.get<double>());
        }
    }
    return m;
}

}  // namespace

void write_jsonl(const Dataset& data, std::ostream& out) {
    for (const auto& s : data.samples) {
        json j;
        j["id"] = s.id;
        j["domain"] = s.domain;
        j["label"] = s.label;
        j["text"] = matrix_to_json(s.text);
        j["video"] = matrix_to_json(s.video);
        out << j.dump() << '\n';
    }
}

void write_jsonl(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    write_jsonl(data, out);
}

Dataset read_jsonl(std::istream& in) {
    Dataset data;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
        }
        for (const char* key : {"id", "domain", "label", "text", "video"}) {
            if (!j.contains(key)) throw FormatError("line " + std::to_string(lineno) + ": missing field '" + key + "'");
        }
        if (!j["id"].is_string() || !j["domain"].is_string() || !j["label"].is_number_integer()) {
            throw FormatError("line " + std::to_string(lineno) + ": id/domain must be strings and label an integer");
        }
        Sample s;
        s.id = j["id"].get<std::string>();
        s.domain = j["domain"].get<std::string>();
        s.label = j["label"].get<int>();
        s.text = matrix_from_json(j["text"], "text", lineno);
        s.video = matrix_from_json(j["video"], "video", lineno);
        data.samples.push_back(std::move(s));
    }
    return data;
}

Dataset read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open dataset '" + path.string() + "'");
    return read_jsonl(in);
}

}  // namespace seqmask
