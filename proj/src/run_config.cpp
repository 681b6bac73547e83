#include "cseg/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"

namespace cseg {

using nlohmann::json;

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed fields are read as size_t");

class Section {
public:
    Section(const json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
        for (const auto& [key, value] : j_.items()) {
            if (!allowed.count(key)) throw ConfigError("unknown config key '" + qualified(key) + "'");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    const json& at(const std::string& key) const { return j_.at(key); }

    void get(const std::string& key, bool& dst) const {
        if (auto it = j_.find(key); it != j_.end()) {
            if (!it->is_boolean()) fail(key, "a boolean");
            dst = it->get<bool>();
        }
    }
    void get(const std::string& key, double& dst) const {
        if (auto it = j_.find(key); it != j_.end()) {
            if (!it->is_number()) fail(key, "a number");
            dst = it->get<double>();
        }
    }
    void get(const std::string& key, int& dst) const {
        if (auto it = j_.find(key); it != j_.end()) {
            if (!it->is_number_integer()) fail(key, "an integer");
            dst = it->get<int>();
        }
    }
    void get(const std::string& key, std::size_t& dst) const {
        if (auto it = j_.find(key); it != j_.end()) {
            if (!it->is_number_unsigned()) fail(key, "a non-negative integer");
            dst = it->get<std::size_t>();
        }
    }
    void get(const std::string& key, std::string& dst) const {
        if (auto it = j_.find(key); it != j_.end()) {
            if (!it->is_string()) fail(key, "a string");
            dst = it->get<std::string>();
        }
    }
    void get_path(const std::string& key, std::filesystem::path& dst, const std::filesystem::path& base) const {
        std::string s;
        if (!has(key)) return;
        get(key, s);
        dst = s;
        if (!dst.empty() && dst.is_relative() && !base.empty()) dst = base / dst;
    }

    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    [[noreturn]] void fail(const std::string& key, const char* what) const {
        throw ConfigError("config key '" + qualified(key) + "' must be " + what);
    }

    const json& j_;
    std::string path_;
};

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (!(data.val_fraction >= 0.0 && data.val_fraction < 1.0)) throw ConfigError("data.val_fraction must be in [0, 1)");
    if (!(synth.val_fraction >= 0.0 && synth.val_fraction < 1.0)) {
        throw ConfigError("synth.val_fraction must be in [0, 1)");
    }
    if (synth.channels < 1) throw ConfigError("synth.channels must be >= 1");
}

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir,
                           const std::string& origin) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": not valid JSON: " + e.what());
    }
    RunConfig rc;
    try {
        const Section top(doc, "", {"model", "train", "augmentation", "data", "synth", "benchmark", "output_dir",
                                    "reference_mode", "threads"});
        top.get_path("output_dir", rc.output_dir, base_dir);
        top.get("reference_mode", rc.reference_mode);
        top.get("threads", rc.threads);

        if (top.has("model")) {
            const Section s(top.at("model"), "model",
                            {"name", "input_size", "max_filters", "depth", "use_se", "use_residual", "in_channels",
                             "se_ratio", "batchnorm"});
            if (s.has("name")) {
                for (const char* k : {"input_size", "max_filters", "depth", "use_se"}) {
                    if (s.has(k)) throw ConfigError("config key 'model." + std::string(k) + "' conflicts with model.name");
                }
                std::string name;
                s.get("name", name);
                rc.model = parse_config_name(name);
            }
            s.get("input_size", rc.model.input_size);
            s.get("max_filters", rc.model.max_filters);
            s.get("depth", rc.model.depth);
            s.get("use_se", rc.model.use_se);
            s.get("use_residual", rc.model.use_residual);
            s.get("in_channels", rc.model.in_channels);
            s.get("se_ratio", rc.model.se_ratio);
            s.get("batchnorm", rc.model.batchnorm);
        }
        if (top.has("train")) {
            const Section s(top.at("train"), "train",
                            {"optimizer", "learning_rate", "beta1", "beta2", "eps", "momentum", "batch_size", "epochs",
                             "seed", "bce_weight", "patience", "dice_epsilon", "threshold", "max_grad_norm",
                             "target_dice"});
            auto& t = rc.train;
            if (s.has("optimizer")) {
                std::string kind;
                s.get("optimizer", kind);
                t.optimizer.kind = parse_optimizer_kind(kind);
            }
            s.get("learning_rate", t.optimizer.learning_rate);
            s.get("beta1", t.optimizer.beta1);
            s.get("beta2", t.optimizer.beta2);
            s.get("eps", t.optimizer.eps);
            s.get("momentum", t.optimizer.momentum);
            s.get("batch_size", t.batch_size);
            s.get("epochs", t.epochs);
            s.get("seed", t.seed);
            s.get("bce_weight", t.bce_weight);
            s.get("patience", t.patience);
            s.get("dice_epsilon", t.dice_epsilon);
            s.get("threshold", t.threshold);
            s.get("max_grad_norm", t.max_grad_norm);
            s.get("target_dice", t.target_dice);
        }
        if (top.has("augmentation")) {
            const Section s(top.at("augmentation"), "augmentation", {"hflip", "vflip", "rot90", "brightness"});
            auto& a = rc.train.augmentation;
            s.get("hflip", a.hflip);
            s.get("vflip", a.vflip);
            s.get("rot90", a.rot90);
            s.get("brightness", a.brightness);
        }
        if (top.has("data")) {
            const Section s(top.at("data"), "data", {"manifest", "train_split", "val_split", "tile_stride", "val_fraction"});
            s.get_path("manifest", rc.data.manifest, base_dir);
            s.get("train_split", rc.data.train_split);
            s.get("val_split", rc.data.val_split);
            s.get("tile_stride", rc.data.tile_stride);
            s.get("val_fraction", rc.data.val_fraction);
        }
        if (top.has("synth")) {
            const Section s(top.at("synth"), "synth", {"n_scenes", "size", "channels", "seed", "val_fraction"});
            s.get("n_scenes", rc.synth.n_scenes);
            s.get("size", rc.synth.size);
            s.get("channels", rc.synth.channels);
            s.get("seed", rc.synth.seed);
            s.get("val_fraction", rc.synth.val_fraction);
        }
        if (top.has("benchmark")) {
            const Section s(top.at("benchmark"), "benchmark", {"names"});
            if (s.has("names")) {
                const json& names = s.at("names");
                if (!names.is_array()) throw ConfigError("config key 'benchmark.names' must be a list of strings");
                for (const auto& n : names) {
                    if (!n.is_string()) throw ConfigError("config key 'benchmark.names' must be a list of strings");
                    rc.benchmark_names.push_back(n.get<std::string>());
                }
                rc.benchmark_names_set = true;
            }
        }
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    rc.validate();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str(), path.parent_path(), path.string());
}

std::string run_config_to_json(const RunConfig& rc) {
    const auto& m = rc.model;
    const auto& t = rc.train;
    json j;
    j["model"] = {{"input_size", m.input_size}, {"max_filters", m.max_filters}, {"depth", m.depth},
                  {"use_se", m.use_se},         {"use_residual", m.use_residual}, {"in_channels", m.in_channels},
                  {"se_ratio", m.se_ratio},     {"batchnorm", m.batchnorm}};
    j["train"] = {{"optimizer", to_string(t.optimizer.kind)},
                  {"learning_rate", t.optimizer.learning_rate},
                  {"beta1", t.optimizer.beta1},
                  {"beta2", t.optimizer.beta2},
                  {"eps", t.optimizer.eps},
                  {"momentum", t.optimizer.momentum},
                  {"batch_size", t.batch_size},
                  {"epochs", t.epochs},
                  {"seed", t.seed},
                  {"bce_weight", t.bce_weight},
                  {"patience", t.patience},
                  {"dice_epsilon", t.dice_epsilon},
                  {"threshold", t.threshold},
                  {"max_grad_norm", t.max_grad_norm},
                  {"target_dice", t.target_dice}};
    j["augmentation"] = {{"hflip", t.augmentation.hflip},
                         {"vflip", t.augmentation.vflip},
                         {"rot90", t.augmentation.rot90},
                         {"brightness", t.augmentation.brightness}};
    j["data"] = {{"manifest", rc.data.manifest.string()},
                 {"train_split", rc.data.train_split},
                 {"val_split", rc.data.val_split},
                 {"tile_stride", rc.data.tile_stride},
                 {"val_fraction", rc.data.val_fraction}};
    j["synth"] = {{"n_scenes", rc.synth.n_scenes},
                  {"size", rc.synth.size},
                  {"channels", rc.synth.channels},
                  {"seed", rc.synth.seed},
                  {"val_fraction", rc.synth.val_fraction}};
    j["benchmark"] = {{"names", rc.benchmark_names_set ? rc.benchmark_names : results_table_names()}};
    j["output_dir"] = rc.output_dir.string();
    j["reference_mode"] = rc.reference_mode;
    j["threads"] = rc.threads;
    return j.dump(2);
}

}  // namespace cseg
