// seqmask command-line tool: generate, train, evaluate, analyze, gradcheck.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "seqmask/analysis.hpp"
#include "seqmask/config.hpp"
#include "seqmask/errors.hpp"
#include "seqmask/gradcheck.hpp"
#include "seqmask/report.hpp"
#include "seqmask/synthgen.hpp"
#include "seqmask/trainer.hpp"

namespace fs = std::filesystem;
using namespace seqmask;

namespace {

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string seeds;
    std::string out;
};

RunConfig resolve(const Common& c) {
    RunConfig cfg;
    if (!c.config_file.empty()) cfg.load(fs::path(c.config_file));
    for (const auto& o : c.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
        cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (!c.seeds.empty()) cfg.set("run.seeds", c.seeds);
    if (!c.out.empty()) cfg.set("run.output", c.out);
    return cfg;
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config_file, "config file of 'key = value' lines");
    cmd->add_option("-s,--set", c.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--seeds", c.seeds, "seed list, e.g. 1,2,3 or 1-5");
    cmd->add_option("-o,--out", c.out, "output directory");
}

std::string mask_csv(const MaskState& mask) {
    std::ostringstream out;
    out << std::setprecision(17) << "index,r,s,p\n";
    const auto pattern = mask.pattern();
    for (std::size_t i = 0; i < mask.dim(); ++i)
        out << i << ',' << mask.r[i] << ',' << mask.s[i] << ',' << int(pattern[i]) << '\n';
    return out.str();
}

ModelConfig model_for_data(const RunConfig& cfg, std::uint64_t seed, const Dataset& data) {
    ModelConfig m = cfg.model_for(seed);
    if (!data.empty()) {
        const auto& s = data.samples.front();
        m.text_tokens = s.text.rows;
        m.text_dim = s.text.cols;
        m.video_frames = s.video.rows;
        m.video_dim = s.video.cols;
    }
    return m;
}

std::vector<std::string> domains_with_role(const RunConfig& cfg, DomainRole role) {
    std::vector<std::string> out;
    for (const auto& d : cfg.domains)
        if (d.role == role) out.push_back(d.id);
    return out;
}

ojson with_config(const RunConfig& cfg, std::uint64_t seed, ojson body) {
    ojson j;
    j["config"] = cfg.to_json();
    j["seed"] = seed;
    for (auto& [k, v] : body.items()) j[k] = v;
    return j;
}

int cmd_generate(const Common& c) {
    RunConfig cfg = resolve(c);
    const CausalSpec spec = cfg.causal_spec();
    Dataset data = generate_dataset(spec, cfg.domains);
    const fs::path out(cfg.output);
    fs::create_directories(out);
    write_jsonl(data, out / "dataset.jsonl");
    ojson truth = ground_truth_json(spec, cfg.domains);
    write_json(out / "ground_truth.json", with_config(cfg, cfg.seeds.front(), truth));
    std::cout << "wrote " << data.size() << " samples to " << (out / "dataset.jsonl").string() << "\n";
    return 0;
}

ojson train_one(const RunConfig& cfg, const Dataset& train, std::uint64_t seed, const fs::path& dir) {
    ModelConfig m = model_for_data(cfg, seed, train);
    TrainResult result = train_sequential(train, m, {});
    fs::create_directories(dir);
    ojson run_cfg = cfg.to_json();
    run_cfg["run.seed"] = std::to_string(seed);
    save_checkpoint(dir / "checkpoint.json", result.params, result.rng_state, run_cfg);
    ojson report;
    report["stages"] = to_json(result.stages);
    write_json(dir / "stage_report.json", with_config(cfg, seed, report));
    write_text(dir / "mask_text.csv", mask_csv(result.params.text.mask));
    write_text(dir / "mask_video.csv", mask_csv(result.params.video.mask));

    ojson summary;
    summary["seed"] = seed;
    summary["checkpoint"] = (dir / "checkpoint.json").string();
    summary["retained_text"] = retained_fraction(result.params.text.mask);
    summary["retained_video"] = retained_fraction(result.params.video.mask);
    summary["support_text"] = result.params.text.mask.support();
    summary["support_video"] = result.params.video.mask.support();
    return summary;
}

int cmd_train(const Common& c, const std::string& data_path) {
    RunConfig cfg = resolve(c);
    Dataset all = read_jsonl(fs::path(data_path));
    auto sources = domains_with_role(cfg, DomainRole::source);
    Dataset train = all.filter(sources);
    if (train.empty()) throw InputError("no samples from the configured source domains in " + data_path);

    const fs::path out(cfg.output);
    std::vector<std::future<ojson>> jobs;
    for (auto seed : cfg.seeds) {
        const fs::path dir = cfg.seeds.size() == 1 ? out : out / ("seed_" + std::to_string(seed));
        jobs.push_back(std::async(std::launch::async, train_one, std::cref(cfg), std::cref(train), seed, dir));
    }
    ojson runs = ojson::array();
    for (auto& j : jobs) runs.push_back(j.get());
    if (cfg.seeds.size() > 1) {
        ojson body;
        body["runs"] = runs;
        write_json(out / "summary.json", with_config(cfg, cfg.seeds.front(), body));
    }
    std::cout << runs.dump(2) << "\n";
    return 0;
}

int cmd_evaluate(const Common& c, const std::vector<std::string>& checkpoints, const std::string& data_path,
                 const std::string& decisions_path) {
    RunConfig cfg = resolve(c);
    Dataset data = read_jsonl(fs::path(data_path));
    ojson results = ojson::array();
    for (const auto& path : checkpoints) {
        Checkpoint ck = load_checkpoint(fs::path(path));
        data.validate(ck.params.config.classes);
        EvalReport report = evaluate(ck.params, data);
        ojson body;
        body["checkpoint"] = path;
        body["accuracy"] = to_json(report, cfg.domains);
        results.push_back(with_config(cfg, ck.params.config.seed, body));

        if (!decisions_path.empty() && ck.params.config.keyframe) {
            // Eval-mode keyframe decisions per frame.
            std::ostringstream csv;
            csv << std::setprecision(17) << "sample_id,frame,keep_probability,keep\n";
            const auto& mc = ck.params.config;
            for (std::size_t start = 0; start < data.size(); start += 256) {
                std::vector<std::size_t> idx;
                for (std::size_t i = start; i < std::min(data.size(), start + 256); ++i) idx.push_back(i);
                Batch batch = make_batch(data, idx, mc);
                Tensor pi = ck.params.keyframe.probabilities(batch.video, mc.video_frames);
                Rng rng(mc.seed);
                Decision d = sample_decision(pi, mc.video_frames, SampleMode::eval, 1.0, rng);
                for (std::size_t b = 0; b < idx.size(); ++b)
                    for (std::size_t f = 0; f < mc.video_frames; ++f) {
                        const std::size_t row = b * mc.video_frames + f;
                        csv << data.samples[idx[b]].id << ',' << f << ',' << pi.at(row, 1) << ','
                            << int(d.keep[row]) << '\n';
                    }
            }
            write_text(fs::path(decisions_path), csv.str());
        }
    }
    ojson out = results.size() == 1 ? results.front() : ojson(results);
    if (!cfg.output.empty()) write_json(fs::path(cfg.output) / "evaluation.json", out);
    std::cout << out.dump(2) << "\n";
    return 0;
}

std::string ratio_csv(const IndependenceReport& r) {
    std::ostringstream out;
    out << std::setprecision(17) << "feature,independent,dependent,independent_ratio,dependent_ratio\n";
    for (const auto& f : r.features)
        out << f.feature << ',' << f.independent << ',' << f.dependent << ',' << f.independent_ratio << ','
            << f.dependent_ratio << '\n';
    return out.str();
}

std::string overlap_csv(const OverlapReport& r) {
    std::ostringstream out;
    out << std::setprecision(17) << "run";
    for (const auto& d : r.domains) out << ',' << d;
    out << '\n';
    for (std::size_t a = 0; a < r.domains.size(); ++a) {
        out << r.domains[a];
        for (double v : r.jaccard[a]) out << ',' << v;
        out << '\n';
    }
    return out.str();
}

int cmd_analyze(const Common& c, const std::vector<std::string>& checkpoints, const std::string& data_path,
                const std::string& truth_path) {
    RunConfig cfg = resolve(c);
    Dataset all = read_jsonl(fs::path(data_path));
    Checkpoint ck = load_checkpoint(fs::path(checkpoints.front()));
    const ModelParams& params = ck.params;
    all.validate(params.config.classes);

    const auto sup_t = params.text.mask.support();
    const auto sup_v = params.video.mask.support();
    FeatureMatrix ft = modality_features(params, all, Modality::text, cfg.feature_source);
    FeatureMatrix fv = modality_features(params, all, Modality::video, cfg.feature_source);
    std::vector<int> labels;
    for (const auto& s : all.samples) labels.push_back(s.label);

    auto cross = cross_modal_independence(ft, fv, sup_t, sup_v, cfg.level);
    auto intra_t = intra_modal_independence(ft, sup_t, cfg.level);
    auto intra_v = intra_modal_independence(fv, sup_v, cfg.level);
    auto lab_t = label_correlation(ft, labels, sup_t, params.config.classes, cfg.level, cfg.label_encoding,
                                   cfg.positive_class);
    auto lab_v = label_correlation(fv, labels, sup_v, params.config.classes, cfg.level, cfg.label_encoding,
                                   cfg.positive_class);

    ojson body;
    body["checkpoint"] = checkpoints.front();
    body["features"] = to_string(cfg.feature_source);
    body["cross_modal"] = to_json(cross);
    body["intra_modal_text"] = to_json(intra_t);
    body["intra_modal_video"] = to_json(intra_v);
    body["label_text"] = to_json(lab_t);
    body["label_video"] = to_json(lab_v);

    // Evidence matrix of the final head for the first sample.
    if (!all.empty()) {
        std::vector<std::size_t> idx{0};
        Batch batch = make_batch(all, idx, params.config);
        ForwardOptions opts;
        const Modality first = first_modality(params.config.order);
        const Modality second = second_modality(params.config.order);
        Tensor f1 = run_modality(batch, params, first, opts).fused;
        Tensor f2 = run_modality(batch, params, second, opts).fused;
        Tensor x = concat(reshape(f1, {f1.numel()}), reshape(f2, {f2.numel()}));
        FeatureMatrix r = evidence_matrix(params.head(second).weight(), x.values());
        ojson ev;
        ev["sample"] = all.samples[0].id;
        ev["rows"] = r.rows;
        ev["cols"] = r.cols;
        ev["values"] = r.values;
        body["evidence_matrix"] = std::move(ev);
    }

    if (!truth_path.empty()) {
        auto truth = read_json(fs::path(truth_path));
        try {
            ojson rec;
            for (const char* m : {"text", "video"}) {
                auto inv = truth.at(m).at("invariant").get<std::vector<std::size_t>>();
                auto spur = truth.at(m).at("spurious").get<std::vector<std::size_t>>();
                rec[m] = to_json(recovery_score(std::string(m) == "text" ? sup_t : sup_v, inv, spur));
            }
            body["recovery"] = std::move(rec);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(truth_path + ": " + e.what());
        }
    }

    if (checkpoints.size() > 1) {
        std::vector<std::pair<std::string, std::vector<std::size_t>>> st, sv;
        for (const auto& path : checkpoints) {
            Checkpoint other = path == checkpoints.front() ? ck : load_checkpoint(fs::path(path));
            st.emplace_back(path, other.params.text.mask.support());
            sv.emplace_back(path, other.params.video.mask.support());
        }
        auto ot = invariant_overlap(st), ov = invariant_overlap(sv);
        body["overlap_text"] = to_json(ot);
        body["overlap_video"] = to_json(ov);
        write_text(fs::path(cfg.output) / "overlap_text.csv", overlap_csv(ot));
        write_text(fs::path(cfg.output) / "overlap_video.csv", overlap_csv(ov));
    }

    const fs::path out(cfg.output);
    write_json(out / "analysis.json", with_config(cfg, params.config.seed, body));
    write_text(out / "cross_modal.csv", ratio_csv(cross));
    write_text(out / "intra_modal_text.csv", ratio_csv(intra_t));
    write_text(out / "intra_modal_video.csv", ratio_csv(intra_v));
    std::cout << "cross-modal independent ratio " << cross.mean_independent_ratio() << ", intra text "
              << intra_t.mean_independent_ratio() << ", intra video " << intra_v.mean_independent_ratio()
              << "\nwrote " << (out / "analysis.json").string() << "\n";
    return 0;
}

int cmd_gradcheck(const Common& c, std::size_t instances, const std::vector<std::string>& only) {
    RunConfig cfg = resolve(c);
    GradCheckOptions opts;
    opts.instances = instances;
    opts.seed = cfg.seeds.front();
    auto results = run_gradchecks(opts, only);
    bool ok = true;
    ojson rows = ojson::array();
    std::cout << std::left << std::setw(24) << "op" << std::setw(10) << "passed" << "max_rel_error\n";
    for (const auto& r : results) {
        ok = ok && r.ok();
        std::cout << std::setw(24) << r.name << std::setw(10)
                  << (std::to_string(r.passed) + "/" + std::to_string(r.instances)) << r.max_rel_error
                  << (r.ok() ? "" : "  FAIL") << "\n";
        ojson row;
        row["op"] = r.name;
        row["instances"] = r.instances;
        row["passed"] = r.passed;
        row["max_rel_error"] = r.max_rel_error;
        rows.push_back(std::move(row));
    }
    ojson body;
    body["step"] = opts.step;
    body["tolerance"] = opts.tolerance;
    body["checks"] = std::move(rows);
    write_json(fs::path(cfg.output) / "gradcheck.json", with_config(cfg, opts.seed, body));
    return ok ? 0 : static_cast<int>(ExitCode::numerical);
}

int report_error(const std::string& kind, const std::string& message, ExitCode code) {
    ojson e;
    e["error"]["kind"] = kind;
    e["error"]["message"] = message;
    e["error"]["exit_code"] = static_cast<int>(code);
    std::cerr << e.dump() << "\n";
    return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential sparse-mask multimodal domain generalization"};
    app.require_subcommand(1);
    Common common;
    std::string data, truth, decisions;
    std::vector<std::string> checkpoints, only;
    std::size_t instances = 100;

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset and its ground truth");
    add_common(gen, common);

    auto* train = app.add_subcommand("train", "train on the source domains of a dataset");
    add_common(train, common);
    train->add_option("-d,--data", data, "dataset (JSON lines)")->required();

    auto* eval = app.add_subcommand("evaluate", "per-domain accuracy of trained checkpoints");
    add_common(eval, common);
    eval->add_option("-k,--checkpoint", checkpoints, "checkpoint file(s)")->required();
    eval->add_option("-d,--data", data, "dataset (JSON lines)")->required();
    eval->add_option("--decisions", decisions, "write keyframe decisions of the first checkpoint as CSV");

    auto* analyze = app.add_subcommand("analyze", "independence, label correlation, overlap and recovery reports");
    add_common(analyze, common);
    analyze->add_option("-k,--checkpoint", checkpoints, "checkpoint file(s); several enable overlap")->required();
    analyze->add_option("-d,--data", data, "dataset (JSON lines)")->required();
    analyze->add_option("-g,--ground-truth", truth, "ground-truth JSON from generate");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every op");
    add_common(grad, common);
    grad->add_option("-n,--instances", instances, "random instances per op");
    grad->add_option("--only", only, "restrict to these op names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage_error", e.what(), ExitCode::usage);
    }

    try {
        if (*gen) return cmd_generate(common);
        if (*train) return cmd_train(common, data);
        if (*eval) return cmd_evaluate(common, checkpoints, data, decisions);
        if (*analyze) return cmd_analyze(common, checkpoints, data, truth);
        if (*grad) return cmd_gradcheck(common, instances, only);
    } catch (const Error& e) {
        return report_error(e.kind(), e.what(), e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        return report_error("input_error", e.what(), ExitCode::data);
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        std::cerr << ojson{{"error", {{"kind", "internal_error"}, {"message", msg}, {"exit_code", 1}}}}.dump() << "\n";
        return 1;
    }
    return 0;
}
