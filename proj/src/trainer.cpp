#include "seqmask/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "seqmask/errors.hpp"
#include "seqmask/optim.hpp"

namespace seqmask {

namespace {

constexpr std::uint64_t kSplitSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kShuffleSalt = 0xc2b2ae3d27d4eb4fULL;
constexpr std::uint64_t kEvalSalt = 0x165667b19e3779f9ULL;
constexpr std::size_t kEvalChunk = 256;

enum class StageKind { solo, conditioned, joint, evidence };

struct StagePlan {
    StageKind kind;
    Modality modality;  // trained modality for solo/conditioned
    std::size_t epochs;
};

Evidence evidence_for(Ablation a) {
    switch (a) {
        case Ablation::add_noise: return Evidence::noise;
        case Ablation::domain_specific: return Evidence::removed;
        case Ablation::none: break;
    }
    return Evidence::learned;
}

std::string stage_name(const StagePlan& plan) {
    switch (plan.kind) {
        case StageKind::solo:
        case StageKind::conditioned: return to_string(plan.modality);
        case StageKind::joint: return "joint";
        case StageKind::evidence: return "evidence";
    }
    return "?";
}

struct StepResult {
    Tensor total;
    Tensor logits;
    double ce = 0.0, sparse = 0.0, recon = 0.0;
};

// Forward pass of one stage. `frozen` tells whether the conditioning modality
// is excluded from the optimizer.
StepResult stage_forward(const StagePlan& plan, const Batch& batch, const ModelParams& params,
                         const ForwardOptions& train_opts, bool frozen_first) {
    const auto& cfg = params.config;
    StepResult out;
    switch (plan.kind) {
        case StageKind::solo: {
            auto l = plan.modality == Modality::text ? loss_stage_text(batch, params, cfg.alpha, train_opts)
                                                     : loss_stage_video(batch, params, cfg.alpha, train_opts);
            out = {l.total, l.logits, l.ce, l.sparse, l.recon};
            break;
        }
        case StageKind::conditioned: {
            const Modality first = first_modality(cfg.order);
            ForwardOptions cond_opts = train_opts;
            if (frozen_first) cond_opts.mode = SampleMode::eval;
            Tensor cond = run_modality(batch, params, first, cond_opts).fused;
            if (frozen_first) cond = cond.detach();
            auto l = plan.modality == Modality::text ? loss_stage_text(batch, params, cfg.alpha, train_opts, &cond)
                                                     : loss_stage_video(batch, params, cfg.alpha, train_opts, &cond);
            out = {l.total, l.logits, l.ce, l.sparse, l.recon};
            break;
        }
        case StageKind::joint: {
            auto lt = loss_stage_text(batch, params, cfg.alpha, train_opts);
            auto lv = loss_stage_video(batch, params, cfg.alpha, train_opts, &lt.output.fused);
            out.total = add(lt.total, lv.total);
            out.logits = lv.logits;
            out.ce = lt.ce + lv.ce;
            out.sparse = lt.sparse + lv.sparse;
            out.recon = lv.recon;
            break;
        }
        case StageKind::evidence: {
            ForwardOptions opts = train_opts;
            opts.mode = SampleMode::eval;
            opts.evidence = evidence_for(cfg.ablation);
            const Modality first = first_modality(cfg.order);
            const Modality second = second_modality(cfg.order);
            Tensor f1 = run_modality(batch, params, first, opts).fused.detach();
            Tensor f2 = run_modality(batch, params, second, opts).fused.detach();
            out.logits = head_logits(params, second, f2, &f1);
            Tensor ce = cross_entropy(out.logits, batch.labels);
            out.ce = ce.item();
            out.total = ce;
            break;
        }
    }
    return out;
}

// Eval-mode logits matching what a stage optimizes.
Tensor stage_logits(const StagePlan& plan, const Batch& batch, const ModelParams& params, Rng& rng) {
    ForwardOptions opts;
    opts.mode = SampleMode::eval;
    opts.rng = &rng;
    if (plan.kind == StageKind::evidence) opts.evidence = evidence_for(params.config.ablation);
    if (plan.kind == StageKind::solo) {
        return head_logits(params, plan.modality, run_modality(batch, params, plan.modality, opts).fused, nullptr);
    }
    return final_logits(batch, params, opts);
}

ParamList stage_params(const StagePlan& plan, const ModelParams& params) {
    const auto& cfg = params.config;
    switch (plan.kind) {
        case StageKind::solo: return params.side(plan.modality);
        case StageKind::conditioned: {
            ParamList p = params.side(plan.modality);
            if (cfg.unfreeze_first) {
                for (auto& q : params.side(first_modality(cfg.order))) p.push_back(std::move(q));
            }
            return p;
        }
        case StageKind::joint: return params.all();
        case StageKind::evidence: {
            ParamList p;
            const Modality second = second_modality(cfg.order);
            append_params(p, "head_" + to_string(second), params.head(second).params());
            return p;
        }
    }
    return {};
}

std::map<std::string, double> accuracy_by_domain(const std::vector<std::string>& domains,
                                                 const std::vector<int>& labels, const std::vector<int>& preds) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& c = counts[domains[i]];
        c.first += preds[i] == labels[i] ? 1 : 0;
        c.second += 1;
    }
    std::map<std::string, double> out;
    for (const auto& [d, c] : counts) out[d] = static_cast<double>(c.first) / static_cast<double>(c.second);
    return out;
}

void fill_supports(StageReport& report, const ModelParams& params) {
    report.support_text = params.text.mask.support();
    report.support_video = params.video.mask.support();
    report.retained_text = retained_fraction(params.text.mask);
    report.retained_video = retained_fraction(params.video.mask);
}

void run_stage(const StagePlan& plan, ModelParams& params, const Dataset& data, const Split& split, Rng& rng,
               StageReport& report, const StepCallback& on_step) {
    const auto& cfg = params.config;
    report.name = stage_name(plan);
    report.epochs = plan.epochs;
    if (plan.kind == StageKind::joint) report.trained = {Modality::text, Modality::video};
    else if (plan.kind != StageKind::evidence) report.trained = {plan.modality};

    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    adam_cfg.warmup_epochs = cfg.warmup_epochs;
    Adam optimizer(stage_params(plan, params), adam_cfg);
    const bool frozen_first = !cfg.unfreeze_first;

    std::optional<ModelParams> best;
    double best_val = -1.0;
    std::vector<std::size_t> order = split.train;
    std::size_t step = 0;

    Batch val_batch;
    if (!split.val.empty()) val_batch = make_batch(data, split.val, cfg);

    for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = warmup_lr(adam_cfg, epoch);
        rec.temperature = cfg.temperature_at(epoch);

        ForwardOptions opts;
        opts.mode = SampleMode::train;
        opts.rng = &rng;
        opts.temperature = rec.temperature;

        std::vector<std::string> seen_domains;
        std::vector<int> seen_labels, seen_preds;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            Batch batch = make_batch(data, idx, cfg);

            optimizer.zero_grad();
            StepResult r = stage_forward(plan, batch, params, opts, frozen_first);
            const double loss = r.total.item();
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "non-finite loss in stage '" << report.name << "' (lr " << rec.lr << ", epoch " << epoch
                    << ", batch " << batches << ")";
                throw NumericalError(msg.str());
            }
            r.total.backward();
            optimizer.step(epoch);

            rec.loss += loss;
            rec.ce += r.ce;
            rec.sparse += r.sparse;
            rec.recon += r.recon;
            for (std::size_t i = 0; i < batch.size; ++i) {
                seen_domains.push_back(batch.domains[i]);
                seen_labels.push_back(batch.labels[i]);
                seen_preds.push_back(argmax_row(r.logits, i));
            }
            ++batches;
            ++step;
            if (on_step) on_step(StepProbe{params, report, batch, epoch, step, rec.lr});
        }
        if (batches) {
            const double inv = 1.0 / static_cast<double>(batches);
            rec.loss *= inv;
            rec.ce *= inv;
            rec.sparse *= inv;
            rec.recon *= inv;
        }
        rec.train_accuracy = accuracy_by_domain(seen_domains, seen_labels, seen_preds);
        rec.retained_text = retained_fraction(params.text.mask);
        rec.retained_video = retained_fraction(params.video.mask);

        if (val_batch.size > 0) {
            Rng eval_rng(cfg.seed ^ kEvalSalt);
            Tensor logits = stage_logits(plan, val_batch, params, eval_rng);
            std::vector<int> preds(val_batch.size);
            std::size_t correct = 0;
            for (std::size_t i = 0; i < val_batch.size; ++i) {
                preds[i] = argmax_row(logits, i);
                correct += preds[i] == val_batch.labels[i] ? 1 : 0;
            }
            rec.val_accuracy = accuracy_by_domain(val_batch.domains, val_batch.labels, preds);
            rec.val_overall = static_cast<double>(correct) / static_cast<double>(val_batch.size);
            if (cfg.select_best && rec.val_overall > best_val) {
                best_val = rec.val_overall;
                report.best_epoch = epoch;
                if (!best) best = params.deep_copy();
                else best->copy_values_from(params);
            }
        }
        report.history.push_back(std::move(rec));
    }
    if (best) params.copy_values_from(*best);
    fill_supports(report, params);
}

}  // namespace

Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed ^ kSplitSalt);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
    if (n_val >= n) n_val = 0;
    Split s;
    s.val.assign(idx.begin(), idx.begin() + static_cast<long>(n_val));
    s.train.assign(idx.begin() + static_cast<long>(n_val), idx.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

TrainResult train_sequential(const Dataset& data, const ModelConfig& config, const StepCallback& on_step) {
    config.validate();
    if (data.empty()) throw InputError("training needs a nonempty dataset");
    data.validate(config.classes);

    TrainResult result{ModelParams::init(config), {}, {}};
    const Split split = split_indices(data.size(), config.val_fraction, config.seed);
    Rng rng(config.seed ^ kShuffleSalt);

    std::vector<StagePlan> plans;
    if (config.order == Order::joint) {
        plans.push_back({StageKind::joint, Modality::text, config.epochs});
    } else {
        const std::size_t first_epochs = config.epochs / 2;
        plans.push_back({StageKind::solo, first_modality(config.order), first_epochs});
        plans.push_back({StageKind::conditioned, second_modality(config.order), config.epochs - first_epochs});
    }
    if (config.ablation != Ablation::none) {
        plans.push_back({StageKind::evidence, second_modality(config.order), config.order == Order::joint ? config.epochs
                                                                                    : config.epochs - config.epochs / 2});
    }

    for (const auto& plan : plans) {
        StageReport report;
        if (plan.kind == StageKind::evidence) {
            // The joint head trained with learned evidence is discarded.
            Rng head_rng(config.seed ^ kEvalSalt);
            result.params.head(plan.modality) = Linear(config.text_dim + config.video_dim,
                                                       static_cast<std::size_t>(config.classes), head_rng);
        }
        run_stage(plan, result.params, data, split, rng, report, on_step);
        result.stages.push_back(std::move(report));
    }
    std::ostringstream state;
    state << rng;
    result.rng_state = state.str();
    return result;
}

std::vector<int> predict(const ModelParams& params, const Dataset& data) {
    std::vector<int> preds;
    preds.reserve(data.size());
    Rng rng(params.config.seed ^ kEvalSalt);
    ForwardOptions opts;
    opts.mode = SampleMode::eval;
    opts.rng = &rng;
    opts.evidence = evidence_for(params.config.ablation);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
        const std::size_t end = std::min(data.size(), start + kEvalChunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Batch batch = make_batch(data, idx, params.config);
        Tensor logits = final_logits(batch, params, opts);
        for (std::size_t i = 0; i < batch.size; ++i) preds.push_back(argmax_row(logits, i));
    }
    return preds;
}

EvalReport score_predictions(const Dataset& data, const std::vector<int>& predictions) {
    if (predictions.size() != data.size()) throw DimensionError("prediction count does not match the dataset");
    EvalReport report;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const bool hit = predictions[i] == data.samples[i].label;
        auto& d = report.domains[data.samples[i].domain];
        d.correct += hit ? 1 : 0;
        d.total += 1;
        report.overall.correct += hit ? 1 : 0;
        report.overall.total += 1;
    }
    for (auto& [_, d] : report.domains) d.accuracy = static_cast<double>(d.correct) / static_cast<double>(d.total);
    if (report.overall.total)
        report.overall.accuracy =
            static_cast<double>(report.overall.correct) / static_cast<double>(report.overall.total);
    return report;
}

EvalReport evaluate(const ModelParams& params, const Dataset& data) {
    return score_predictions(data, predict(params, data));
}

}  // namespace seqmask
