#pragma once

// Fisher z independence tests, independence and label-correlation ratios,
// cross-domain support overlap, classifier evidence matrices and mask
// recovery scoring.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqmask/dataset.hpp"
#include "seqmask/model.hpp"
#include "seqmask/tensor.hpp"

namespace seqmask {

constexpr double kDefaultLevel = 0.05;

// Two-sided standard normal critical value; 1.959964 at 0.05.
double critical_value(double level);

// Throws InputError when either vector is constant or sizes differ.
double pearson(std::span<const double> x, std::span<const double> y);
// atanh(r) * sqrt(n - 3); infinite for |r| = 1. Throws InputError for n < 4.
double fisher_z_statistic(double r, std::size_t n);

struct FisherResult {
    double r = 0.0;
    double z = 0.0;
    bool dependent = false;
};

FisherResult fisher_z(std::span<const double> x, std::span<const double> y, double level = kDefaultLevel);

struct FeatureRatio {
    std::size_t feature = 0;
    std::size_t independent = 0;
    std::size_t dependent = 0;
    std::size_t skipped = 0;  // partner column was constant
    double independent_ratio = 0.0;
    double dependent_ratio = 0.0;
};

struct IndependenceReport {
    std::string method;
    double level = kDefaultLevel;
    std::size_t n = 0;
    std::vector<FeatureRatio> features;

    double mean_independent_ratio() const;
    double mean_dependent_ratio() const;
};

// Columns of row-per-sample matrices. Each selected text feature is tested
// against every selected video feature.
IndependenceReport cross_modal_independence(const FeatureMatrix& text, const FeatureMatrix& video,
                                            const std::vector<std::size_t>& text_support,
                                            const std::vector<std::size_t>& video_support,
                                            double level = kDefaultLevel);
IndependenceReport intra_modal_independence(const FeatureMatrix& feats, const std::vector<std::size_t>& support,
                                            double level = kDefaultLevel);

enum class LabelEncoding { ordinal, one_vs_rest };

std::string to_string(LabelEncoding e);
LabelEncoding label_encoding_from_string(const std::string& s);

// Ordinal: class k of K maps to k - (K - 1) / 2, so {-1, 0, +1} for K = 3.
// One-vs-rest: indicator of `positive_class`.
std::vector<double> encode_labels(std::span<const int> labels, int classes, LabelEncoding encoding,
                                  int positive_class = 0);

struct LabelCorrelation {
    double level = kDefaultLevel;
    LabelEncoding encoding = LabelEncoding::ordinal;
    // Per feature; nullopt when the column is constant.
    std::vector<std::optional<FisherResult>> results;
    std::size_t selected_count = 0, selected_dependent = 0;
    std::size_t removed_count = 0, removed_dependent = 0;
    double selected_dependent_ratio = 0.0;
    double removed_dependent_ratio = 0.0;
};

LabelCorrelation label_correlation(const FeatureMatrix& feats, std::span<const int> labels,
                                   const std::vector<std::size_t>& support, int classes,
                                   double level = kDefaultLevel, LabelEncoding encoding = LabelEncoding::ordinal,
                                   int positive_class = 0);

struct OverlapReport {
    std::vector<std::string> domains;
    std::vector<std::vector<double>> jaccard;
    std::vector<std::size_t> consistent;  // selected in every domain
};

// Jaccard of two empty sets is 1.
double jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);
OverlapReport invariant_overlap(const std::vector<std::pair<std::string, std::vector<std::size_t>>>& supports);

// R(j, k) = W(j, k) * x_j, times m_j when a mask is given. W is laid out
// [in, out] like Linear weights, so column sums are the bias-free logits.
FeatureMatrix evidence_matrix(const Tensor& weight, std::span<const double> x,
                              std::optional<std::span<const double>> m = std::nullopt);

struct RecoveryScore {
    double precision = 0.0;
    double recall = 0.0;
    double invariant_retention = 0.0;
    double spurious_retention = 0.0;
    std::size_t selected = 0;
};

RecoveryScore recovery_score(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& truth,
                             const std::vector<std::size_t>& spurious);

enum class FeatureSource { masked, raw };

std::string to_string(FeatureSource s);
FeatureSource feature_source_from_string(const std::string& s);

// One row per sample: token mean of the encoder output feeding the mask
// (masked), or of the input tokens (raw). Eval mode throughout.
FeatureMatrix modality_features(const ModelParams& params, const Dataset& data, Modality modality,
                                FeatureSource source = FeatureSource::masked);

}  // namespace seqmask
