#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace seqmask {

// Dense row-major matrix of plain values (no autodiff).
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    bool operator==(const FeatureMatrix&) const = default;
};

// One multimodal record: text tokens [tau_t, d_t], video frames [tau_v, d_v].
struct Sample {
    std::string id;
    std::string domain;
    int label = 0;
    FeatureMatrix text;
    FeatureMatrix video;

    bool operator==(const Sample&) const = default;
};

struct Dataset {
    std::vector<Sample> samples;

    bool empty() const { return samples.empty(); }
    std::size_t size() const { return samples.size(); }
    // Domain names in first-appearance order.
    std::vector<std::string> domains() const;
    Dataset filter(const std::vector<std::string>& domains) const;
    Dataset subset(const std::vector<std::size_t>& indices) const;
    std::map<int, std::size_t> label_counts() const;

    // Throws DimensionError unless every sample shares the first sample's
    // token/frame shapes, InputError for labels outside [0, classes).
    void validate(int classes) const;
};

// JSON-lines: one object per sample with id, domain, label, text, video.
void write_jsonl(const Dataset& data, std::ostream& out);
void write_jsonl(const Dataset& data, const std::filesystem::path& path);
Dataset read_jsonl(std::istream& in);
Dataset read_jsonl(const std::filesystem::path& path);

}  // namespace seqmask
