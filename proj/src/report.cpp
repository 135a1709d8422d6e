#include "seqmask/report.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "seqmask/config.hpp"
#include "seqmask/errors.hpp"

namespace seqmask {

namespace {

constexpr const char* kCheckpointFormat = "seqmask-checkpoint";

ojson accuracy_json(const DomainAccuracy& a) {
    ojson j;
    j["correct"] = a.correct;
    j["total"] = a.total;
    j["accuracy"] = a.accuracy;
    return j;
}

ojson modality_list(const std::vector<Modality>& ms) {
    ojson j = ojson::array();
    for (auto m : ms) j.push_back(to_string(m));
    return j;
}

ojson modality_json(const ModalityCausal& m) {
    ojson j;
    j["dim"] = m.dim;
    j["invariant"] = m.invariant;
    j["spurious"] = m.spurious;
    j["noise"] = m.noise();
    j["label_weights"] = m.label_weights;
    return j;
}

}  // namespace

ojson checkpoint_json(const ModelParams& params, const std::string& rng_state, const ojson& run_config) {
    ojson j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["config"] = run_config;
    j["model"] = to_json(params.config);
    j["rng_state"] = rng_state;
    ojson tensors = ojson::object();
    for (const auto& p : params.all()) {
        ojson t;
        t["shape"] = p.tensor.shape();
        t["values"] = std::vector<double>(p.tensor.values().begin(), p.tensor.values().end());
        tensors[p.name] = std::move(t);
    }
    j["tensors"] = std::move(tensors);
    return j;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const std::string& rng_state,
                     const ojson& run_config) {
    write_json(path, checkpoint_json(params, rng_state, run_config));
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
        throw FormatError("not a checkpoint (missing format header)");
    if (j.value("version", -1) != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + j.value("version", nlohmann::json()).dump());
    if (!j.contains("model") || !j.contains("tensors")) throw FormatError("checkpoint lacks model or tensors");

    Checkpoint out{ModelParams::init(model_config_from_json(j.at("model"))), {}, j.value("rng_state", "")};
    if (j.contains("config")) out.run_config = j.at("config");
    const auto& tensors = j.at("tensors");
    std::size_t matched = 0;
    for (auto& p : out.params.all()) {
        if (!tensors.contains(p.name)) throw FormatError("checkpoint lacks tensor '" + p.name + "'");
        const auto& t = tensors.at(p.name);
        try {
            if (t.at("shape").get<Shape>() != p.tensor.shape())
                throw FormatError("tensor '" + p.name + "' has the wrong shape");
            auto values = t.at("values").get<std::vector<double>>();
            if (values.size() != p.tensor.numel()) throw FormatError("tensor '" + p.name + "' has the wrong size");
            std::copy(values.begin(), values.end(), p.tensor.mutable_values().begin());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("tensor '" + p.name + "': " + e.what());
        }
        ++matched;
    }
    if (matched != tensors.size()) throw FormatError("checkpoint has tensors the model does not define");
    return out;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json(path)); }

ojson to_json(const StageReport& r) {
    ojson j;
    j["name"] = r.name;
    j["trained"] = modality_list(r.trained);
    j["epochs"] = r.epochs;
    j["best_epoch"] = r.best_epoch ? ojson(*r.best_epoch) : ojson(nullptr);
    j["support_text"] = r.support_text;
    j["support_video"] = r.support_video;
    j["retained_text"] = r.retained_text;
    j["retained_video"] = r.retained_video;
    ojson hist = ojson::array();
    for (const auto& e : r.history) {
        ojson h;
        h["epoch"] = e.epoch;
        h["lr"] = e.lr;
        h["temperature"] = e.temperature;
        h["loss"] = e.loss;
        h["ce"] = e.ce;
        h["sparse"] = e.sparse;
        h["recon"] = e.recon;
        h["retained_text"] = e.retained_text;
        h["retained_video"] = e.retained_video;
        h["train_accuracy"] = e.train_accuracy;
        h["val_accuracy"] = e.val_accuracy;
        h["val_overall"] = e.val_overall;
        hist.push_back(std::move(h));
    }
    j["history"] = std::move(hist);
    return j;
}

ojson to_json(const std::vector<StageReport>& stages) {
    ojson j = ojson::array();
    for (const auto& s : stages) j.push_back(to_json(s));
    return j;
}

ojson to_json(const EvalReport& report, const std::vector<DomainSpec>& roles) {
    std::map<std::string, std::string> role_of;
    for (const auto& d : roles) role_of[d.id] = to_string(d.role);
    ojson j;
    ojson source = ojson::object(), target = ojson::object(), other = ojson::object();
    for (const auto& [name, acc] : report.domains) {
        auto it = role_of.find(name);
        if (it == role_of.end()) other[name] = accuracy_json(acc);
        else if (it->second == "source") source[name] = accuracy_json(acc);
        else target[name] = accuracy_json(acc);
    }
    j["source"] = std::move(source);
    j["target"] = std::move(target);
    if (!other.empty()) j["unassigned"] = std::move(other);
    j["overall"] = accuracy_json(report.overall);
    return j;
}

ojson to_json(const IndependenceReport& r) {
    ojson j;
    j["method"] = r.method;
    j["level"] = r.level;
    j["n"] = r.n;
    j["mean_independent_ratio"] = r.mean_independent_ratio();
    j["mean_dependent_ratio"] = r.mean_dependent_ratio();
    ojson fs = ojson::array();
    for (const auto& f : r.features) {
        ojson e;
        e["feature"] = f.feature;
        e["independent"] = f.independent;
        e["dependent"] = f.dependent;
        e["skipped"] = f.skipped;
        e["independent_ratio"] = f.independent_ratio;
        e["dependent_ratio"] = f.dependent_ratio;
        fs.push_back(std::move(e));
    }
    j["features"] = std::move(fs);
    return j;
}

ojson to_json(const LabelCorrelation& r) {
    ojson j;
    j["level"] = r.level;
    j["encoding"] = to_string(r.encoding);
    j["selected_count"] = r.selected_count;
    j["selected_dependent"] = r.selected_dependent;
    j["selected_dependent_ratio"] = r.selected_dependent_ratio;
    j["removed_count"] = r.removed_count;
    j["removed_dependent"] = r.removed_dependent;
    j["removed_dependent_ratio"] = r.removed_dependent_ratio;
    ojson fs = ojson::array();
    for (std::size_t i = 0; i < r.results.size(); ++i) {
        ojson e;
        e["feature"] = i;
        if (r.results[i]) {
            e["r"] = r.results[i]->r;
            e["z"] = std::isfinite(r.results[i]->z) ? ojson(r.results[i]->z) : ojson(r.results[i]->z > 0 ? "inf" : "-inf");
            e["dependent"] = r.results[i]->dependent;
        } else {
            e["constant"] = true;
        }
        fs.push_back(std::move(e));
    }
    j["features"] = std::move(fs);
    return j;
}

ojson to_json(const OverlapReport& r) {
    ojson j;
    j["domains"] = r.domains;
    j["jaccard"] = r.jaccard;
    j["consistent"] = r.consistent;
    return j;
}

ojson to_json(const RecoveryScore& s) {
    ojson j;
    j["selected"] = s.selected;
    j["precision"] = s.precision;
    j["recall"] = s.recall;
    j["invariant_retention"] = s.invariant_retention;
    j["spurious_retention"] = s.spurious_retention;
    return j;
}

ojson ground_truth_json(const CausalSpec& spec, const std::vector<DomainSpec>& domains) {
    ojson j;
    j["text"] = modality_json(spec.text);
    j["video"] = modality_json(spec.video);
    ojson s;
    s["confounder_dim"] = spec.confounder_dim;
    s["confounder_loading"] = spec.confounder_loading;
    s["spurious_confounding"] = spec.spurious_confounding;
    s["edge_strength"] = spec.edge_strength;
    s["label_noise"] = spec.label_noise;
    s["text_tokens"] = spec.text_tokens;
    s["video_frames"] = spec.video_frames;
    s["jitter"] = spec.jitter;
    s["nonlinear"] = spec.nonlinear;
    s["classes"] = spec.classes;
    s["structure_seed"] = spec.structure_seed;
    s["thresholds"] = label_thresholds(spec);
    j["spec"] = std::move(s);
    ojson ds = ojson::array();
    for (const auto& d : domains) {
        ojson e;
        e["id"] = d.id;
        e["role"] = to_string(d.role);
        e["n"] = d.n;
        e["sign"] = d.sign;
        e["strength"] = d.strength;
        e["seed"] = d.seed;
        ds.push_back(std::move(e));
    }
    j["domains"] = std::move(ds);
    return j;
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

}  // namespace seqmask
