#include "seqmask/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "seqmask/errors.hpp"

namespace seqmask {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

template <typename T>
std::string fmt_int(T v) {
    return std::to_string(v);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as " + expected);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
    return out;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "a boolean");
}

std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& v) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        // a-b expands to an inclusive range
        auto dash = item.find('-');
        if (dash != std::string::npos && dash > 0) {
            auto lo = parse_integer<std::uint64_t>(key, trim(item.substr(0, dash)));
            auto hi = parse_integer<std::uint64_t>(key, trim(item.substr(dash + 1)));
            if (hi < lo) bad_value(key, v, "an ascending seed range");
            for (auto s = lo; s <= hi; ++s) out.push_back(s);
        } else {
            out.push_back(parse_integer<std::uint64_t>(key, item));
        }
    }
    if (out.empty()) bad_value(key, v, "a nonempty seed list");
    return out;
}

struct KeyDef {
    std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SEQ_DOUBLE(expr)                                                                         \
    KeyDef {                                                                                     \
        [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_double(k, v); }, \
            [](const RunConfig& c) { return fmt(expr); }                                         \
    }
#define SEQ_SIZE(expr)                                                                                        \
    KeyDef {                                                                                                  \
        [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_integer<std::size_t>(k, v); }, \
            [](const RunConfig& c) { return fmt_int(expr); }                                                  \
    }
#define SEQ_U64(expr)                                                                                             \
    KeyDef {                                                                                                      \
        [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_integer<std::uint64_t>(k, v); }, \
            [](const RunConfig& c) { return fmt_int(expr); }                                                      \
    }
#define SEQ_INT(expr)                                                                                   \
    KeyDef {                                                                                            \
        [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_integer<int>(k, v); }, \
            [](const RunConfig& c) { return fmt_int(expr); }                                            \
    }
#define SEQ_BOOL(expr)                                                                         \
    KeyDef {                                                                                   \
        [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_bool(k, v); }, \
            [](const RunConfig& c) { return fmt(expr); }                                       \
    }

const std::map<std::string, KeyDef>& key_table() {
    static const std::map<std::string, KeyDef> table = {
        {"model.alpha", SEQ_DOUBLE(c.model.alpha)},
        {"model.order",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.model.order = order_from_string(v); },
          [](const RunConfig& c) { return to_string(c.model.order); }}},
        {"model.epochs", SEQ_SIZE(c.model.epochs)},
        {"model.batch_size", SEQ_SIZE(c.model.batch_size)},
        {"model.lr", SEQ_DOUBLE(c.model.lr)},
        {"model.warmup_epochs", SEQ_SIZE(c.model.warmup_epochs)},
        {"model.encoder_heads", SEQ_SIZE(c.model.encoder_heads)},
        {"model.keyframe", SEQ_BOOL(c.model.keyframe)},
        {"model.stride", SEQ_SIZE(c.model.stride)},
        {"model.keyframe_heads", SEQ_SIZE(c.model.keyframe_heads)},
        {"model.temperature", SEQ_DOUBLE(c.model.temperature)},
        {"model.temperature_decay", SEQ_DOUBLE(c.model.temperature_decay)},
        {"model.temperature_floor", SEQ_DOUBLE(c.model.temperature_floor)},
        {"model.recon_weight", SEQ_DOUBLE(c.model.recon_weight)},
        {"model.r_init", SEQ_DOUBLE(c.model.r_init)},
        {"model.s_init", SEQ_DOUBLE(c.model.s_init)},
        {"model.unfreeze_first", SEQ_BOOL(c.model.unfreeze_first)},
        {"model.val_fraction", SEQ_DOUBLE(c.model.val_fraction)},
        {"model.select_best", SEQ_BOOL(c.model.select_best)},
        {"model.ablation",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.model.ablation = ablation_from_string(v); },
          [](const RunConfig& c) { return to_string(c.model.ablation); }}},

        {"gen.text_dim", SEQ_SIZE(c.shape.text_dim)},
        {"gen.video_dim", SEQ_SIZE(c.shape.video_dim)},
        {"gen.text_invariant", SEQ_SIZE(c.shape.text_invariant)},
        {"gen.text_spurious", SEQ_SIZE(c.shape.text_spurious)},
        {"gen.video_invariant", SEQ_SIZE(c.shape.video_invariant)},
        {"gen.video_spurious", SEQ_SIZE(c.shape.video_spurious)},
        {"gen.text_weight", SEQ_DOUBLE(c.shape.text_weight)},
        {"gen.video_weight", SEQ_DOUBLE(c.shape.video_weight)},
        {"gen.confounder_dim", SEQ_SIZE(c.causal.confounder_dim)},
        {"gen.confounder_loading", SEQ_DOUBLE(c.causal.confounder_loading)},
        {"gen.spurious_confounding", SEQ_DOUBLE(c.causal.spurious_confounding)},
        {"gen.edge_strength", SEQ_DOUBLE(c.causal.edge_strength)},
        {"gen.label_noise", SEQ_DOUBLE(c.causal.label_noise)},
        {"gen.text_tokens", SEQ_SIZE(c.causal.text_tokens)},
        {"gen.video_frames", SEQ_SIZE(c.causal.video_frames)},
        {"gen.jitter", SEQ_DOUBLE(c.causal.jitter)},
        {"gen.nonlinear", SEQ_BOOL(c.causal.nonlinear)},
        {"gen.classes", SEQ_INT(c.causal.classes)},
        {"gen.structure_seed", SEQ_U64(c.causal.structure_seed)},

        {"domains.preset",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v != "default" && v != "flip") bad_value(k, v, "default or flip");
              c.domains_preset = v;
              c.domains = default_domains(v == "flip");
          },
          [](const RunConfig& c) { return c.domains_preset; }}},

        {"analysis.level", SEQ_DOUBLE(c.level)},
        {"analysis.features",
         {[](RunConfig& c, const std::string&, const std::string& v) {
              c.feature_source = feature_source_from_string(v);
          },
          [](const RunConfig& c) { return to_string(c.feature_source); }}},
        {"analysis.label_encoding",
         {[](RunConfig& c, const std::string&, const std::string& v) {
              c.label_encoding = label_encoding_from_string(v);
          },
          [](const RunConfig& c) { return to_string(c.label_encoding); }}},
        {"analysis.positive_class", SEQ_INT(c.positive_class)},

        {"run.seeds",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.seeds = parse_seeds(k, v); },
          [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.seeds[i]);
              return out;
          }}},
        {"run.output",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.output = v; },
          [](const RunConfig& c) { return c.output; }}},
    };
    return table;
}

#undef SEQ_DOUBLE
#undef SEQ_SIZE
#undef SEQ_U64
#undef SEQ_INT
#undef SEQ_BOOL

const std::vector<std::string> kDomainFields = {"n", "role", "seed", "sign", "strength"};

void set_domain_field(RunConfig& c, const std::string& key, const std::string& id, const std::string& field,
                      const std::string& v) {
    if (std::find(kDomainFields.begin(), kDomainFields.end(), field) == kDomainFields.end())
        throw UnknownKeyError("unknown configuration key '" + key + "'");
    auto it = std::find_if(c.domains.begin(), c.domains.end(), [&](const DomainSpec& d) { return d.id == id; });
    if (it == c.domains.end()) {
        DomainSpec d;
        d.id = id;
        d.seed = 1000 + c.domains.size() + 1;
        c.domains.push_back(d);
        it = std::prev(c.domains.end());
    }
    if (field == "n") {
        it->n = parse_integer<std::size_t>(key, v);
        if (it->n == 0) bad_value(key, v, "a positive sample count");
    } else if (field == "role") {
        it->role = domain_role_from_string(v);
    } else if (field == "seed") {
        it->seed = parse_integer<std::uint64_t>(key, v);
    } else if (field == "sign") {
        it->sign = parse_integer<int>(key, v);
        if (it->sign != 1 && it->sign != -1) bad_value(key, v, "+1 or -1");
    } else {
        it->strength = parse_double(key, v);
    }
}

}  // namespace

std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : key_table()) out.push_back(k);
    return out;
}

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string value = trim(raw_value);
    const auto& table = key_table();
    if (auto it = table.find(key); it != table.end()) {
        it->second.set(*this, key, value);
        return;
    }
    const std::string prefix = "domain.";
    if (key.rfind(prefix, 0) == 0) {
        const auto dot = key.rfind('.');
        if (dot > prefix.size()) {
            set_domain_field(*this, key, key.substr(prefix.size(), dot - prefix.size()), key.substr(dot + 1), value);
            return;
        }
    }
    throw UnknownKeyError("unknown configuration key '" + key + "'");
}

void RunConfig::load(std::istream& in, const std::string& origin) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        try {
            set(line.substr(0, eq), line.substr(eq + 1));
        } catch (const UnknownKeyError& e) {
            throw UnknownKeyError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file " + path.string());
    load(in, path.string());
}

CausalSpec RunConfig::causal_spec() const {
    CausalSpec spec = causal;
    spec.text = make_modality(shape.text_dim, shape.text_invariant, shape.text_spurious, shape.text_weight);
    spec.video = make_modality(shape.video_dim, shape.video_invariant, shape.video_spurious, shape.video_weight);
    spec.validate();
    return spec;
}

ModelConfig RunConfig::model_for(std::uint64_t seed) const {
    ModelConfig m = model;
    m.seed = seed;
    m.text_dim = shape.text_dim;
    m.video_dim = shape.video_dim;
    m.text_tokens = causal.text_tokens;
    m.video_frames = causal.video_frames;
    m.classes = causal.classes;
    return m;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, def] : key_table()) out.emplace_back(k, def.get(*this));
    for (const auto& d : domains) {
        const std::string p = "domain." + d.id + ".";
        out.emplace_back(p + "n", std::to_string(d.n));
        out.emplace_back(p + "role", to_string(d.role));
        out.emplace_back(p + "seed", std::to_string(d.seed));
        out.emplace_back(p + "sign", std::to_string(d.sign));
        out.emplace_back(p + "strength", fmt(d.strength));
    }
    std::sort(out.begin(), out.end());
    return out;
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : entries()) j[k] = v;
    return j;
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["text_dim"] = c.text_dim;
    j["video_dim"] = c.video_dim;
    j["text_tokens"] = c.text_tokens;
    j["video_frames"] = c.video_frames;
    j["classes"] = c.classes;
    j["alpha"] = c.alpha;
    j["order"] = to_string(c.order);
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["warmup_epochs"] = c.warmup_epochs;
    j["seed"] = c.seed;
    j["encoder_heads"] = c.encoder_heads;
    j["keyframe"] = c.keyframe;
    j["stride"] = c.stride;
    j["keyframe_heads"] = c.keyframe_heads;
    j["temperature"] = c.temperature;
    j["temperature_decay"] = c.temperature_decay;
    j["temperature_floor"] = c.temperature_floor;
    j["recon_weight"] = c.recon_weight;
    j["r_init"] = c.r_init;
    j["s_init"] = c.s_init;
    j["unfreeze_first"] = c.unfreeze_first;
    j["val_fraction"] = c.val_fraction;
    j["select_best"] = c.select_best;
    j["ablation"] = to_string(c.ablation);
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.text_dim = j.at("text_dim").get<std::size_t>();
        c.video_dim = j.at("video_dim").get<std::size_t>();
        c.text_tokens = j.at("text_tokens").get<std::size_t>();
        c.video_frames = j.at("video_frames").get<std::size_t>();
        c.classes = j.at("classes").get<int>();
        c.alpha = j.at("alpha").get<double>();
        c.order = order_from_string(j.at("order").get<std::string>());
        c.epochs = j.at("epochs").get<std::size_t>();
        c.batch_size = j.at("batch_size").get<std::size_t>();
        c.lr = j.at("lr").get<double>();
        c.warmup_epochs = j.at("warmup_epochs").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.encoder_heads = j.at("encoder_heads").get<std::size_t>();
        c.keyframe = j.at("keyframe").get<bool>();
        c.stride = j.at("stride").get<std::size_t>();
        c.keyframe_heads = j.at("keyframe_heads").get<std::size_t>();
        c.temperature = j.at("temperature").get<double>();
        c.temperature_decay = j.at("temperature_decay").get<double>();
        c.temperature_floor = j.at("temperature_floor").get<double>();
        c.recon_weight = j.at("recon_weight").get<double>();
        c.r_init = j.at("r_init").get<double>();
        c.s_init = j.at("s_init").get<double>();
        c.unfreeze_first = j.at("unfreeze_first").get<bool>();
        c.val_fraction = j.at("val_fraction").get<double>();
        c.select_best = j.at("select_best").get<bool>();
        c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
    return c;
}

}  // namespace seqmask
