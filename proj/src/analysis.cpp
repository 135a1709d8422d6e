#include "seqmask/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <boost/math/distributions/normal.hpp>

#include "seqmask/errors.hpp"

namespace seqmask {

namespace {

constexpr std::size_t kFeatureChunk = 256;

std::vector<double> column(const FeatureMatrix& m, std::size_t c) {
    std::vector<double> out(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) out[r] = m(r, c);
    return out;
}

bool is_constant(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

void check_support(const std::vector<std::size_t>& support, std::size_t cols, const char* what) {
    for (auto i : support)
        if (i >= cols)
            throw DimensionError(std::string(what) + " support index " + std::to_string(i) + " outside [0, " +
                                 std::to_string(cols) + ")");
}

void finish(FeatureRatio& f) {
    const std::size_t tested = f.independent + f.dependent;
    if (tested) {
        f.independent_ratio = static_cast<double>(f.independent) / static_cast<double>(tested);
        f.dependent_ratio = static_cast<double>(f.dependent) / static_cast<double>(tested);
    }
}

}  // namespace

double critical_value(double level) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("test level must lie in (0, 1)");
    boost::math::normal_distribution<double> normal;
    return boost::math::quantile(normal, 1.0 - level / 2.0);
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw DimensionError("correlation of vectors with lengths " + std::to_string(x.size()) + " and " +
                             std::to_string(y.size()));
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw InputError("correlation is undefined for a constant vector");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double fisher_z_statistic(double r, std::size_t n) {
    if (n < 4) throw InputError("Fisher z needs at least 4 samples, got " + std::to_string(n));
    if (r >= 1.0) return std::numeric_limits<double>::infinity();
    if (r <= -1.0) return -std::numeric_limits<double>::infinity();
    return std::atanh(r) * std::sqrt(static_cast<double>(n) - 3.0);
}

FisherResult fisher_z(std::span<const double> x, std::span<const double> y, double level) {
    if (x.size() < 4) throw InputError("Fisher z needs at least 4 samples, got " + std::to_string(x.size()));
    FisherResult out;
    out.r = pearson(x, y);
    out.z = fisher_z_statistic(out.r, x.size());
    out.dependent = std::abs(out.z) > critical_value(level);
    return out;
}

double IndependenceReport::mean_independent_ratio() const {
    if (features.empty()) return 0.0;
    double s = 0.0;
    for (const auto& f : features) s += f.independent_ratio;
    return s / static_cast<double>(features.size());
}

double IndependenceReport::mean_dependent_ratio() const {
    if (features.empty()) return 0.0;
    double s = 0.0;
    for (const auto& f : features) s += f.dependent_ratio;
    return s / static_cast<double>(features.size());
}

IndependenceReport cross_modal_independence(const FeatureMatrix& text, const FeatureMatrix& video,
                                            const std::vector<std::size_t>& text_support,
                                            const std::vector<std::size_t>& video_support, double level) {
    if (text.rows != video.rows) throw DimensionError("text and video feature matrices have different row counts");
    check_support(text_support, text.cols, "text");
    check_support(video_support, video.cols, "video");
    IndependenceReport report;
    report.method = "cross_modal_fisher_z";
    report.level = level;
    report.n = text.rows;
    if (video_support.empty()) return report;

    std::vector<std::vector<double>> vcols;
    for (auto j : video_support) vcols.push_back(column(video, j));
    for (auto i : text_support) {
        FeatureRatio f;
        f.feature = i;
        auto x = column(text, i);
        for (const auto& y : vcols) {
            if (is_constant(x) || is_constant(y)) {
                ++f.skipped;
                continue;
            }
            (fisher_z(x, y, level).dependent ? f.dependent : f.independent) += 1;
        }
        finish(f);
        report.features.push_back(f);
    }
    return report;
}

IndependenceReport intra_modal_independence(const FeatureMatrix& feats, const std::vector<std::size_t>& support,
                                            double level) {
    check_support(support, feats.cols, "feature");
    IndependenceReport report;
    report.method = "intra_modal_fisher_z";
    report.level = level;
    report.n = feats.rows;
    std::vector<std::vector<double>> cols;
    for (auto i : support) cols.push_back(column(feats, i));
    for (std::size_t a = 0; a < support.size(); ++a) {
        FeatureRatio f;
        f.feature = support[a];
        for (std::size_t b = 0; b < support.size(); ++b) {
            if (a == b) continue;
            if (is_constant(cols[a]) || is_constant(cols[b])) {
                ++f.skipped;
                continue;
            }
            (fisher_z(cols[a], cols[b], level).dependent ? f.dependent : f.independent) += 1;
        }
        finish(f);
        report.features.push_back(f);
    }
    return report;
}

std::string to_string(LabelEncoding e) { return e == LabelEncoding::ordinal ? "ordinal" : "one_vs_rest"; }

LabelEncoding label_encoding_from_string(const std::string& s) {
    if (s == "ordinal") return LabelEncoding::ordinal;
    if (s == "one_vs_rest") return LabelEncoding::one_vs_rest;
    throw ConfigError("unknown label encoding '" + s + "' (expected ordinal or one_vs_rest)");
}

std::vector<double> encode_labels(std::span<const int> labels, int classes, LabelEncoding encoding,
                                  int positive_class) {
    std::vector<double> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw InputError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
        out[i] = encoding == LabelEncoding::ordinal ? labels[i] - 0.5 * (classes - 1)
                                                    : (labels[i] == positive_class ? 1.0 : 0.0);
    }
    return out;
}

LabelCorrelation label_correlation(const FeatureMatrix& feats, std::span<const int> labels,
                                   const std::vector<std::size_t>& support, int classes, double level,
                                   LabelEncoding encoding, int positive_class) {
    if (labels.size() != feats.rows) throw DimensionError("label count does not match feature rows");
    check_support(support, feats.cols, "feature");
    LabelCorrelation out;
    out.level = level;
    out.encoding = encoding;
    const auto y = encode_labels(labels, classes, encoding, positive_class);
    if (is_constant(y)) throw InputError("correlation is undefined for a constant label vector");
    std::set<std::size_t> selected(support.begin(), support.end());
    out.results.resize(feats.cols);
    for (std::size_t c = 0; c < feats.cols; ++c) {
        auto x = column(feats, c);
        const bool in = selected.count(c) > 0;
        if (is_constant(x)) continue;
        out.results[c] = fisher_z(x, y, level);
        const bool dep = out.results[c]->dependent;
        if (in) {
            ++out.selected_count;
            out.selected_dependent += dep;
        } else {
            ++out.removed_count;
            out.removed_dependent += dep;
        }
    }
    if (out.selected_count)
        out.selected_dependent_ratio = static_cast<double>(out.selected_dependent) / out.selected_count;
    if (out.removed_count)
        out.removed_dependent_ratio = static_cast<double>(out.removed_dependent) / out.removed_count;
    return out;
}

double jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::set<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (auto v : sa) inter += sb.count(v);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

OverlapReport invariant_overlap(const std::vector<std::pair<std::string, std::vector<std::size_t>>>& supports) {
    OverlapReport out;
    const std::size_t k = supports.size();
    out.jaccard.assign(k, std::vector<double>(k, 1.0));
    for (std::size_t a = 0; a < k; ++a) {
        out.domains.push_back(supports[a].first);
        for (std::size_t b = a + 1; b < k; ++b)
            out.jaccard[a][b] = out.jaccard[b][a] = jaccard(supports[a].second, supports[b].second);
    }
    if (k == 0) return out;
    std::set<std::size_t> common(supports[0].second.begin(), supports[0].second.end());
    for (std::size_t a = 1; a < k; ++a) {
        std::set<std::size_t> next;
        for (auto v : supports[a].second)
            if (common.count(v)) next.insert(v);
        common = std::move(next);
    }
    out.consistent.assign(common.begin(), common.end());
    return out;
}

FeatureMatrix evidence_matrix(const Tensor& weight, std::span<const double> x,
                              std::optional<std::span<const double>> m) {
    if (weight.rank() != 2) throw DimensionError("evidence matrix needs a 2-D weight");
    const std::size_t in = weight.rows(), out_dim = weight.cols();
    if (x.size() != in)
        throw DimensionError("evidence input has " + std::to_string(x.size()) + " features, weight expects " +
                             std::to_string(in));
    if (m && m->size() != in) throw DimensionError("evidence mask length does not match the input");
    FeatureMatrix r(in, out_dim);
    for (std::size_t j = 0; j < in; ++j) {
        const double xj = m ? x[j] * (*m)[j] : x[j];
        for (std::size_t k = 0; k < out_dim; ++k) r(j, k) = weight.at(j, k) * xj;
    }
    return r;
}

RecoveryScore recovery_score(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& truth,
                             const std::vector<std::size_t>& spurious) {
    std::set<std::size_t> sel(selected.begin(), selected.end());
    RecoveryScore out;
    out.selected = sel.size();
    std::size_t hit = 0, spur_hit = 0;
    for (auto t : std::set<std::size_t>(truth.begin(), truth.end())) hit += sel.count(t);
    for (auto s : std::set<std::size_t>(spurious.begin(), spurious.end())) spur_hit += sel.count(s);
    if (!sel.empty()) out.precision = static_cast<double>(hit) / static_cast<double>(sel.size());
    if (!truth.empty()) out.recall = static_cast<double>(hit) / static_cast<double>(std::set(truth.begin(), truth.end()).size());
    out.invariant_retention = out.recall;
    if (!spurious.empty())
        out.spurious_retention =
            static_cast<double>(spur_hit) / static_cast<double>(std::set(spurious.begin(), spurious.end()).size());
    return out;
}

std::string to_string(FeatureSource s) { return s == FeatureSource::masked ? "masked" : "raw"; }

FeatureSource feature_source_from_string(const std::string& s) {
    if (s == "masked") return FeatureSource::masked;
    if (s == "raw") return FeatureSource::raw;
    throw ConfigError("unknown feature source '" + s + "' (expected masked or raw)");
}

FeatureMatrix modality_features(const ModelParams& params, const Dataset& data, Modality modality,
                                FeatureSource source) {
    const std::size_t d = params.config.dim(modality);
    const std::size_t tokens = params.config.tokens(modality);
    FeatureMatrix out(data.size(), d);
    ForwardOptions opts;
    opts.mode = SampleMode::eval;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += kFeatureChunk) {
        const std::size_t end = std::min(data.size(), start + kFeatureChunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Batch batch = make_batch(data, idx, params.config);
        Tensor x = source == FeatureSource::raw ? batch.features(modality) : encode(batch, params, modality, opts);
        auto v = x.values();
        for (std::size_t b = 0; b < batch.size; ++b)
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t f = 0; f < d; ++f)
                    out(start + b, f) += v[(b * tokens + t) * d + f] / static_cast<double>(tokens);
    }
    return out;
}

}  // namespace seqmask
