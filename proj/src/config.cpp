#include "fedsim/config.hpp"

#include "fedsim/rng.hpp"
#include "fedsim/toml_lite.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fedsim {

namespace {

// Tracks which keys were consumed so leftovers can be rejected by name.
class Reader {
public:
    explicit Reader(toml::Table table) : table_(std::move(table)) {}

    bool has(const std::string& sec, const std::string& key) const {
        auto s = table_.find(sec);
        return s != table_.end() && s->second.count(key) > 0;
    }

    const toml::Value* take(const std::string& sec, const std::string& key) {
        auto s = table_.find(sec);
        if (s == table_.end()) return nullptr;
        auto k = s->second.find(key);
        if (k == s->second.end()) return nullptr;
        seen_.insert(sec + "." + key);
        return &k->second;
    }

    std::string str(const std::string& sec, const std::string& key, const std::string& dflt) {
        const toml::Value* v = take(sec, key);
        if (!v) return dflt;
        if (v->kind != toml::Value::Kind::string)
            throw std::runtime_error("config key " + sec + "." + key + " must be a string");
        return v->s;
    }

    double num(const std::string& sec, const std::string& key, double dflt) {
        const toml::Value* v = take(sec, key);
        if (!v) return dflt;
        if (v->kind != toml::Value::Kind::integer && v->kind != toml::Value::Kind::floating)
            throw std::runtime_error("config key " + sec + "." + key + " must be a number");
        return v->as_number();
    }

    std::int64_t integer(const std::string& sec, const std::string& key, std::int64_t dflt) {
        const toml::Value* v = take(sec, key);
        if (!v) return dflt;
        if (v->kind != toml::Value::Kind::integer)
            throw std::runtime_error("config key " + sec + "." + key + " must be an integer");
        return v->i;
    }

    bool boolean(const std::string& sec, const std::string& key, bool dflt) {
        const toml::Value* v = take(sec, key);
        if (!v) return dflt;
        if (v->kind != toml::Value::Kind::boolean)
            throw std::runtime_error("config key " + sec + "." + key + " must be true/false");
        return v->b;
    }

    std::vector<int> int_array(const std::string& sec, const std::string& key,
                               std::vector<int> dflt) {
        const toml::Value* v = take(sec, key);
        if (!v) return dflt;
        if (v->kind != toml::Value::Kind::array)
            throw std::runtime_error("config key " + sec + "." + key + " must be an array");
        std::vector<int> out;
        for (const auto& item : v->items) {
            if (item.kind != toml::Value::Kind::integer)
                throw std::runtime_error("config key " + sec + "." + key +
                                         " must contain integers");
            out.push_back(static_cast<int>(item.i));
        }
        return out;
    }

    void reject_unknown() const {
        for (const auto& [sec, keys] : table_) {
            if (!known_sections_.count(sec))
                throw std::runtime_error("unknown config section [" + sec + "]");
            for (const auto& [key, value] : keys)
                if (!seen_.count(sec + "." + key))
                    throw std::runtime_error("unknown config key " + sec + "." + key);
        }
    }

    void declare_sections(std::set<std::string> s) { known_sections_ = std::move(s); }

private:
    toml::Table table_;
    std::set<std::string> seen_;
    std::set<std::string> known_sections_;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void ExperimentConfig::validate() const {
    model_spec().validate();
    local.validate();
    if (dataset.source != "synthetic" && dataset.source != "idx")
        throw std::runtime_error("dataset.source must be \"synthetic\" or \"idx\"");
    if (dataset.source == "idx") {
        for (const auto* p : {&dataset.train_images, &dataset.train_labels, &dataset.test_images,
                              &dataset.test_labels})
            if (p->empty())
                throw std::runtime_error("dataset.source = \"idx\" needs all four IDX paths");
    } else {
        if (dataset.n_classes < 2) throw std::runtime_error("dataset.n_classes must be >= 2");
        if (dataset.dim < 1 || dataset.per_class < 1 || dataset.test_per_class < 1)
            throw std::runtime_error("dataset counts must be >= 1");
        if (dataset.spread <= 0.0) throw std::runtime_error("dataset.spread must be > 0");
    }
    if (partition.n_clients < 1) throw std::runtime_error("partition.n_clients must be >= 1");
    if (rounds < 0) throw std::runtime_error("train.rounds must be >= 0");
    if (clients_per_round < 1 || clients_per_round > partition.n_clients)
        throw std::runtime_error("train.clients_per_round out of range");
    if (workers < 1) throw std::runtime_error("run.workers must be >= 1");
    if (fisher_window < 1) throw std::runtime_error("diagnostics.fisher_window must be >= 1");
    if (dp_enabled) dp.validate();
    attack.attack.validate();
    if (attack.targets < 1) throw std::runtime_error("attack.targets must be >= 1");
    if (attack.defense == AttackDefense::dpsgd && !dp_enabled)
        throw std::runtime_error("attack.defense = \"dpsgd\" needs dp.enabled = true");
}

ExperimentConfig parse_config_text(const std::string& text) {
    Reader r(toml::parse(text));
    r.declare_sections({"", "dataset", "partition", "model", "train", "fedreg", "dp", "attack",
                        "diagnostics", "run"});
    ExperimentConfig cfg;

    cfg.dataset.source = r.str("dataset", "source", cfg.dataset.source);
    cfg.dataset.train_images = r.str("dataset", "train_images", "");
    cfg.dataset.train_labels = r.str("dataset", "train_labels", "");
    cfg.dataset.test_images = r.str("dataset", "test_images", "");
    cfg.dataset.test_labels = r.str("dataset", "test_labels", "");
    cfg.dataset.n_classes = static_cast<int>(r.integer("dataset", "n_classes", cfg.dataset.n_classes));
    cfg.dataset.dim = static_cast<int>(r.integer("dataset", "dim", cfg.dataset.dim));
    cfg.dataset.per_class = static_cast<int>(r.integer("dataset", "per_class", cfg.dataset.per_class));
    cfg.dataset.test_per_class =
        static_cast<int>(r.integer("dataset", "test_per_class", cfg.dataset.test_per_class));
    cfg.dataset.spread = r.num("dataset", "spread", cfg.dataset.spread);

    cfg.partition.scheme =
        partition_scheme_from_string(r.str("partition", "scheme", to_string(cfg.partition.scheme)));
    cfg.partition.n_clients =
        static_cast<int>(r.integer("partition", "n_clients", cfg.partition.n_clients));
    cfg.partition.params.power_law_exponent =
        r.num("partition", "power_law_exponent", cfg.partition.params.power_law_exponent);
    cfg.partition.params.min_client_size = static_cast<int>(
        r.integer("partition", "min_client_size", cfg.partition.params.min_client_size));

    cfg.layer_dims = r.int_array("model", "layer_dims", cfg.layer_dims);

    cfg.local.algorithm =
        algorithm_from_string(r.str("train", "algorithm", to_string(cfg.local.algorithm)));
    cfg.rounds = static_cast<int>(r.integer("train", "rounds", cfg.rounds));
    cfg.clients_per_round =
        static_cast<int>(r.integer("train", "clients_per_round", cfg.clients_per_round));
    cfg.local.epochs = static_cast<int>(r.integer("train", "epochs", cfg.local.epochs));
    cfg.local.batch_size = static_cast<int>(r.integer("train", "batch_size", cfg.local.batch_size));
    cfg.local.learning_rate = r.num("train", "learning_rate", cfg.local.learning_rate);
    cfg.local.mu = r.num("train", "mu", cfg.local.mu);
    cfg.local.lambda = r.num("train", "lambda", cfg.local.lambda);
    cfg.weight_by_shard_size =
        r.boolean("train", "weight_by_shard_size", cfg.weight_by_shard_size);

    cfg.local.fedreg.gamma = r.num("fedreg", "gamma", cfg.local.fedreg.gamma);
    cfg.local.fedreg.eta_s = r.num("fedreg", "eta_s", cfg.local.fedreg.eta_s);
    if (r.has("fedreg", "eta_p")) cfg.local.fedreg.eta_p = r.num("fedreg", "eta_p", -1.0);
    cfg.local.fedreg.fgsm_steps =
        static_cast<int>(r.integer("fedreg", "fgsm_steps", cfg.local.fedreg.fgsm_steps));
    cfg.local.fedreg.use_mg = r.boolean("fedreg", "use_mg", cfg.local.fedreg.use_mg);
    cfg.local.fedreg.clip_inputs =
        r.boolean("fedreg", "clip_inputs", cfg.local.fedreg.clip_inputs);
    // resolve the eta_p default so the struct and its echo are explicit
    cfg.local.fedreg.eta_p = cfg.local.fedreg.resolved_eta_p();

    cfg.dp_enabled = r.boolean("dp", "enabled", cfg.dp_enabled);
    cfg.dp.clip_bound = r.num("dp", "clip_bound", cfg.dp.clip_bound);
    cfg.dp.noise_scale = r.num("dp", "noise_scale", cfg.dp.noise_scale);
    if (cfg.dp_enabled) cfg.local.dp = cfg.dp;

    cfg.attack.attack.iterations =
        static_cast<int>(r.integer("attack", "iterations", cfg.attack.attack.iterations));
    cfg.attack.attack.distance = attack_distance_from_string(
        r.str("attack", "distance", to_string(cfg.attack.attack.distance)));
    cfg.attack.attack.tv_weight = r.num("attack", "tv_weight", cfg.attack.attack.tv_weight);
    cfg.attack.attack.step_size = r.num("attack", "step_size", cfg.attack.attack.step_size);
    cfg.attack.defense =
        attack_defense_from_string(r.str("attack", "defense", to_string(cfg.attack.defense)));
    cfg.attack.targets = static_cast<int>(r.integer("attack", "targets", cfg.attack.targets));
    cfg.attack.image_rows =
        static_cast<int>(r.integer("attack", "image_rows", cfg.attack.image_rows));
    cfg.attack.image_cols =
        static_cast<int>(r.integer("attack", "image_cols", cfg.attack.image_cols));

    cfg.fisher_correlation =
        r.boolean("diagnostics", "fisher_correlation", cfg.fisher_correlation);
    cfg.fisher_window =
        static_cast<int>(r.integer("diagnostics", "fisher_window", cfg.fisher_window));
    cfg.reference_accuracy =
        r.num("diagnostics", "reference_accuracy", cfg.reference_accuracy);
    cfg.stop_at_accuracy = r.num("diagnostics", "stop_at_accuracy", cfg.stop_at_accuracy);

    cfg.seed = static_cast<std::uint64_t>(r.integer("run", "seed", static_cast<std::int64_t>(cfg.seed)));
    cfg.workers = static_cast<int>(r.integer("run", "workers", cfg.workers));
    cfg.out_dir = r.str("run", "out_dir", cfg.out_dir);

    r.reject_unknown();
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string echo_config(const ExperimentConfig& cfg) {
    std::ostringstream o;
    o << "[dataset]\n";
    o << "source = \"" << cfg.dataset.source << "\"\n";
    if (cfg.dataset.source == "idx") {
        o << "train_images = \"" << cfg.dataset.train_images << "\"\n";
        o << "train_labels = \"" << cfg.dataset.train_labels << "\"\n";
        o << "test_images = \"" << cfg.dataset.test_images << "\"\n";
        o << "test_labels = \"" << cfg.dataset.test_labels << "\"\n";
    } else {
        o << "n_classes = " << cfg.dataset.n_classes << "\n";
        o << "dim = " << cfg.dataset.dim << "\n";
        o << "per_class = " << cfg.dataset.per_class << "\n";
        o << "test_per_class = " << cfg.dataset.test_per_class << "\n";
        o << "spread = " << fmt(cfg.dataset.spread) << "\n";
    }
    o << "\n[partition]\n";
    o << "scheme = \"" << to_string(cfg.partition.scheme) << "\"\n";
    o << "n_clients = " << cfg.partition.n_clients << "\n";
    o << "power_law_exponent = " << fmt(cfg.partition.params.power_law_exponent) << "\n";
    o << "min_client_size = " << cfg.partition.params.min_client_size << "\n";
    o << "\n[model]\n";
    o << "layer_dims = [";
    for (std::size_t i = 0; i < cfg.layer_dims.size(); ++i)
        o << (i ? ", " : "") << cfg.layer_dims[i];
    o << "]\n";
    o << "\n[train]\n";
    o << "algorithm = \"" << to_string(cfg.local.algorithm) << "\"\n";
    o << "rounds = " << cfg.rounds << "\n";
    o << "clients_per_round = " << cfg.clients_per_round << "\n";
    o << "epochs = " << cfg.local.epochs << "\n";
    o << "batch_size = " << cfg.local.batch_size << "\n";
    o << "learning_rate = " << fmt(cfg.local.learning_rate) << "\n";
    o << "mu = " << fmt(cfg.local.mu) << "\n";
    o << "lambda = " << fmt(cfg.local.lambda) << "\n";
    o << "weight_by_shard_size = " << (cfg.weight_by_shard_size ? "true" : "false") << "\n";
    o << "\n[fedreg]\n";
    o << "gamma = " << fmt(cfg.local.fedreg.gamma) << "\n";
    o << "eta_s = " << fmt(cfg.local.fedreg.eta_s) << "\n";
    o << "eta_p = " << fmt(cfg.local.fedreg.resolved_eta_p()) << "\n";
    o << "fgsm_steps = " << cfg.local.fedreg.fgsm_steps << "\n";
    o << "use_mg = " << (cfg.local.fedreg.use_mg ? "true" : "false") << "\n";
    o << "clip_inputs = " << (cfg.local.fedreg.clip_inputs ? "true" : "false") << "\n";
    o << "\n[dp]\n";
    o << "enabled = " << (cfg.dp_enabled ? "true" : "false") << "\n";
    o << "clip_bound = " << fmt(cfg.dp.clip_bound) << "\n";
    o << "noise_scale = " << fmt(cfg.dp.noise_scale) << "\n";
    o << "\n[attack]\n";
    o << "iterations = " << cfg.attack.attack.iterations << "\n";
    o << "distance = \"" << to_string(cfg.attack.attack.distance) << "\"\n";
    o << "tv_weight = " << fmt(cfg.attack.attack.tv_weight) << "\n";
    o << "step_size = " << fmt(cfg.attack.attack.step_size) << "\n";
    o << "defense = \"" << to_string(cfg.attack.defense) << "\"\n";
    o << "targets = " << cfg.attack.targets << "\n";
    o << "image_rows = " << cfg.attack.image_rows << "\n";
    o << "image_cols = " << cfg.attack.image_cols << "\n";
    o << "\n[diagnostics]\n";
    o << "fisher_correlation = " << (cfg.fisher_correlation ? "true" : "false") << "\n";
    o << "fisher_window = " << cfg.fisher_window << "\n";
    o << "reference_accuracy = " << fmt(cfg.reference_accuracy) << "\n";
    o << "stop_at_accuracy = " << fmt(cfg.stop_at_accuracy) << "\n";
    o << "\n[run]\n";
    o << "seed = " << cfg.seed << "\n";
    o << "workers = " << cfg.workers << "\n";
    o << "out_dir = \"" << cfg.out_dir << "\"\n";
    return o.str();
}

DataBundle load_data(const ExperimentConfig& cfg) {
    DataBundle data;
    if (cfg.dataset.source == "idx") {
        data.train = load_idx(cfg.dataset.train_images, cfg.dataset.train_labels);
        data.test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
        if (data.train.n_classes != data.test.n_classes) {
            const int n = std::max(data.train.n_classes, data.test.n_classes);
            data.train.n_classes = data.test.n_classes = n;
        }
    } else {
        data.train = synth_blobs(cfg.dataset.n_classes, cfg.dataset.dim, cfg.dataset.per_class,
                                 cfg.dataset.spread, derive_seed(cfg.seed, "synth-train"));
        data.test = synth_blobs(cfg.dataset.n_classes, cfg.dataset.dim, cfg.dataset.test_per_class,
                                cfg.dataset.spread, derive_seed(cfg.seed, "synth-test"));
    }
    if (data.train.dim() != cfg.layer_dims.front())
        throw std::runtime_error("model input dim " + std::to_string(cfg.layer_dims.front()) +
                                 " does not match dataset dim " +
                                 std::to_string(data.train.dim()));
    if (data.train.n_classes != cfg.layer_dims.back())
        throw std::runtime_error("model output dim " + std::to_string(cfg.layer_dims.back()) +
                                 " does not match dataset classes " +
                                 std::to_string(data.train.n_classes));
    return data;
}

} // namespace fedsim
