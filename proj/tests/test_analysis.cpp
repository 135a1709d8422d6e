#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "seqmask/analysis.hpp"
#include "seqmask/errors.hpp"
#include "seqmask/model.hpp"

using namespace seqmask;

namespace {

FeatureMatrix gaussian_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    FeatureMatrix m(n, d);
    for (auto& v : m.values) v = normal(rng);
    return m;
}

std::vector<double> column(const FeatureMatrix& m, std::size_t c) {
    std::vector<double> out(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) out[r] = m(r, c);
    return out;
}

}  // namespace

TEST_CASE("critical value at the default level") {
    CHECK(critical_value(0.05) == doctest::Approx(1.959964).epsilon(1e-6));
    CHECK(critical_value(0.01) == doctest::Approx(2.575829).epsilon(1e-6));
}

TEST_CASE("fisher z closed forms") {
    // atanh(0.5) = ln(3)/2
    CHECK(fisher_z_statistic(0.5, 103) == doctest::Approx(10.0 * std::log(3.0) / 2.0).epsilon(1e-12));
    CHECK(fisher_z_statistic(0.5, 103) == doctest::Approx(5.4931).epsilon(1e-4));
    CHECK(fisher_z_statistic(0.0, 50) == 0.0);
    CHECK(std::isinf(fisher_z_statistic(1.0, 10)));
    CHECK_THROWS_AS(fisher_z_statistic(0.2, 3), InputError);

    std::vector<double> x = {1, 2, 3, 4, 5};
    auto same = fisher_z(x, x);
    CHECK(same.dependent);
    CHECK(std::isinf(same.z));

    // orthogonal centered vectors have r = 0
    std::vector<double> a = {1, -1, 1, -1}, b = {1, 1, -1, -1};
    auto zero = fisher_z(a, b);
    CHECK(zero.r == doctest::Approx(0.0));
    CHECK_FALSE(zero.dependent);
}

TEST_CASE("fisher z input errors") {
    std::vector<double> x = {1, 2, 3, 4}, flat = {2, 2, 2, 2};
    CHECK_THROWS_AS(fisher_z(x, flat), InputError);
    std::vector<double> shorter = {1, 2, 3};
    CHECK_THROWS_AS(fisher_z(shorter, shorter), InputError);
    CHECK_THROWS_AS(pearson(x, shorter), DimensionError);
}

TEST_CASE("fisher z is symmetric and affine invariant") {
    auto m = gaussian_matrix(300, 2, 4);
    auto x = column(m, 0), y = column(m, 1);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += 0.3 * x[i];
    auto xy = fisher_z(x, y), yx = fisher_z(y, x);
    CHECK(xy.z == yx.z);
    CHECK(xy.dependent == yx.dependent);
    std::vector<double> scaled(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) scaled[i] = 3.7 * x[i] - 12.0;
    CHECK(std::abs(fisher_z(scaled, y).z - xy.z) < 1e-10);
}

TEST_CASE("rejection rate under the null is near the level") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> normal;
    int rejected = 0;
    const int trials = 10000;
    std::vector<double> x(200), y(200);
    for (int t = 0; t < trials; ++t) {
        for (auto& v : x) v = normal(rng);
        for (auto& v : y) v = normal(rng);
        rejected += fisher_z(x, y).dependent;
    }
    CHECK(std::abs(rejected / double(trials) - 0.05) < 0.01);
}

TEST_CASE("cross-modal independence") {
    auto text = gaussian_matrix(2000, 6, 1);
    auto video = gaussian_matrix(2000, 5, 2);
    auto report = cross_modal_independence(text, video, {0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4});
    CHECK(report.features.size() == 6);
    CHECK(report.mean_independent_ratio() >= 0.9);
    for (const auto& f : report.features) {
        CHECK(f.independent + f.dependent == 5);
        CHECK(f.independent_ratio + f.dependent_ratio == doctest::Approx(1.0));
    }

    FeatureMatrix copy = text;
    auto copied = cross_modal_independence(text, copy, {0, 1, 2}, {0, 1, 2});
    for (const auto& f : copied.features) CHECK(f.dependent >= 1);
    auto copied_pair = cross_modal_independence(text, copy, {2}, {2});
    CHECK(copied_pair.features[0].dependent_ratio == 1.0);

    auto empty = cross_modal_independence(text, video, {0, 1}, {});
    CHECK(empty.features.empty());
}

TEST_CASE("intra-modal independence") {
    auto feats = gaussian_matrix(2000, 8, 3);
    auto report = intra_modal_independence(feats, {0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(report.mean_independent_ratio() >= 0.9);
    for (const auto& f : report.features) CHECK(f.independent + f.dependent == 7);

    for (std::size_t r = 0; r < feats.rows; ++r) feats(r, 1) = 2.0 * feats(r, 0);
    auto dup = intra_modal_independence(feats, {0, 1});
    CHECK(dup.features[0].dependent_ratio == 1.0);
    CHECK(dup.features[1].dependent_ratio == 1.0);

    CHECK(intra_modal_independence(feats, {}).features.empty());
}

TEST_CASE("label correlation") {
    const std::size_t n = 2000;
    auto feats = gaussian_matrix(n, 30, 5);
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> pick(0, 2);
    std::vector<int> labels(n);
    for (auto& l : labels) l = pick(rng);
    auto code = encode_labels(labels, 3, LabelEncoding::ordinal);
    CHECK(code[0] == labels[0] - 1.0);
    for (std::size_t r = 0; r < n; ++r) feats(r, 0) = code[r];

    std::vector<std::size_t> support = {0};
    auto lc = label_correlation(feats, labels, support, 3);
    REQUIRE(lc.results[0].has_value());
    CHECK(lc.results[0]->dependent);
    CHECK(lc.selected_dependent_ratio == 1.0);
    CHECK(lc.removed_count == 29);
    // pure noise columns: about 5% dependent
    CHECK(lc.removed_dependent_ratio <= 0.2);

    auto ovr = encode_labels(labels, 3, LabelEncoding::one_vs_rest, 2);
    CHECK(ovr[0] == (labels[0] == 2 ? 1.0 : 0.0));
}

TEST_CASE("noise features are independent of labels at about the nominal rate") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> pick(0, 2);
    std::vector<int> labels(2000);
    for (auto& l : labels) l = pick(rng);
    auto feats = gaussian_matrix(2000, 400, 9);
    auto lc = label_correlation(feats, labels, {}, 3);
    const double independent = 1.0 - lc.removed_dependent_ratio;
    CHECK(independent == doctest::Approx(0.95).epsilon(0.03));
}

TEST_CASE("jaccard and overlap") {
    CHECK(jaccard({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(jaccard({1, 2}, {3, 4}) == 0.0);
    CHECK(jaccard({1, 2, 3}, {2, 3, 4}) == 0.5);
    CHECK(jaccard({}, {}) == 1.0);

    auto report = invariant_overlap({{"a", {1, 2, 3}}, {"b", {2, 3, 4}}, {"c", {9}}});
    CHECK(report.jaccard[0][1] == 0.5);
    CHECK(report.jaccard[1][0] == 0.5);
    CHECK(report.jaccard[0][0] == 1.0);
    CHECK(report.consistent.empty());
    auto two = invariant_overlap({{"a", {1, 2, 3}}, {"b", {2, 3, 4}}});
    CHECK(two.consistent == std::vector<std::size_t>{2, 3});
}

TEST_CASE("evidence matrix") {
    // 2 features, 2 classes by hand
    auto W = Tensor::matrix(2, 2, {1.0, -2.0, 0.5, 3.0});
    std::vector<double> x = {2.0, -1.0};
    auto R = evidence_matrix(W, x);
    CHECK(R(0, 0) == 2.0);
    CHECK(R(0, 1) == -4.0);
    CHECK(R(1, 0) == -0.5);
    CHECK(R(1, 1) == -3.0);

    std::vector<double> m = {0.0, 0.7};
    auto RM = evidence_matrix(W, x, std::span<const double>(m));
    CHECK(RM(0, 0) == 0.0);
    CHECK(RM(0, 1) == 0.0);
    CHECK(RM(1, 1) == doctest::Approx(-2.1));
}

TEST_CASE("evidence columns sum to the text logits") {
    ModelConfig c;
    c.text_dim = c.video_dim = 4;
    c.text_tokens = 2;
    c.video_frames = 3;
    c.encoder_heads = c.keyframe_heads = 2;
    auto params = ModelParams::init(c);
    Dataset data;
    Sample s;
    s.id = "x";
    s.domain = "d";
    s.text = FeatureMatrix(2, 4);
    s.video = FeatureMatrix(3, 4);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal;
    for (auto& v : s.text.values) v = normal(rng);
    for (auto& v : s.video.values) v = normal(rng);
    data.samples.push_back(s);
    auto batch = make_batch(data, c);
    auto fused = run_modality(batch, params, Modality::text, {}).fused;
    auto logits = forward_text(batch, params, {});
    std::vector<double> fv(fused.values().begin(), fused.values().end());
    auto R = evidence_matrix(params.head_text.weight(), fv);
    for (std::size_t k = 0; k < 3; ++k) {
        double col = params.head_text.bias()[k];
        for (std::size_t j = 0; j < 4; ++j) col += R(j, k);
        CHECK(std::abs(col - logits[k]) < 1e-12);
    }
}

TEST_CASE("recovery scoring") {
    std::vector<std::size_t> truth = {0, 1, 2, 3}, spurious = {4, 5, 6, 7};
    auto exact = recovery_score(truth, truth, spurious);
    CHECK(exact.precision == 1.0);
    CHECK(exact.recall == 1.0);
    CHECK(exact.spurious_retention == 0.0);

    auto wrong = recovery_score(spurious, truth, spurious);
    CHECK(wrong.invariant_retention == 0.0);
    CHECK(wrong.spurious_retention == 1.0);

    // {0, 1} correct, {4} spurious, {9} noise
    auto mixed = recovery_score({0, 1, 4, 9}, truth, spurious);
    CHECK(mixed.precision == 0.5);
    CHECK(mixed.recall == 0.5);
    CHECK(mixed.invariant_retention == 0.5);
    CHECK(mixed.spurious_retention == 0.25);
    CHECK(mixed.selected == 4);
}
