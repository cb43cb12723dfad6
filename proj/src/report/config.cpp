#include "fedlsi/report/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fedlsi::report {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& ctx) {
    for (const auto& item : obj.items()) {
        if (!allowed.contains(item.key())) {
            throw std::runtime_error("unknown key '" + item.key() + "' in " + ctx);
        }
    }
}

double get_number(const json& obj, const char* key, double dflt) {
    if (!obj.contains(key)) {
        return dflt;
    }
    if (!obj[key].is_number()) {
        throw std::runtime_error(std::string("key '") + key + "' must be a number");
    }
    return obj[key].get<double>();
}

long long get_integer(const json& obj, const char* key, long long dflt) {
    if (!obj.contains(key)) {
        return dflt;
    }
    if (!obj[key].is_number_integer()) {
        throw std::runtime_error(std::string("key '") + key + "' must be an integer");
    }
    return obj[key].get<long long>();
}

bool get_bool(const json& obj, const char* key, bool dflt) {
    if (!obj.contains(key)) {
        return dflt;
    }
    if (!obj[key].is_boolean()) {
        throw std::runtime_error(std::string("key '") + key + "' must be a boolean");
    }
    return obj[key].get<bool>();
}

std::string get_string(const json& obj, const char* key, const std::string& dflt) {
    if (!obj.contains(key)) {
        return dflt;
    }
    if (!obj[key].is_string()) {
        throw std::runtime_error(std::string("key '") + key + "' must be a string");
    }
    return obj[key].get<std::string>();
}

void parse_data_section(const json& obj, ExperimentConfig& cfg) {
    check_keys(obj,
               {"csv_path", "classes", "noise_sigma", "samples_per_domain", "ambient_dim",
                "embed_seed", "domains"},
               "data");
    cfg.csv_path = get_string(obj, "csv_path", cfg.csv_path);
    cfg.synthetic.classes = static_cast<int>(get_integer(obj, "classes", cfg.synthetic.classes));
    cfg.synthetic.noise_sigma = get_number(obj, "noise_sigma", cfg.synthetic.noise_sigma);
    cfg.synthetic.samples_per_domain = static_cast<int>(
        get_integer(obj, "samples_per_domain", cfg.synthetic.samples_per_domain));
    cfg.synthetic.ambient_dim = static_cast<std::size_t>(
        get_integer(obj, "ambient_dim", static_cast<long long>(cfg.synthetic.ambient_dim)));
    cfg.synthetic.embed_seed = static_cast<std::uint64_t>(
        get_integer(obj, "embed_seed", static_cast<long long>(cfg.synthetic.embed_seed)));
    if (obj.contains("domains")) {
        if (!obj["domains"].is_array()) {
            throw std::runtime_error("key 'domains' must be an array");
        }
        cfg.synthetic.domains.clear();
        for (const auto& d : obj["domains"]) {
            check_keys(d, {"angle_deg", "scale", "shift"}, "data.domains[]");
            data::DomainTransform tf;
            tf.angle_deg = get_number(d, "angle_deg", 0.0);
            tf.scale = get_number(d, "scale", 1.0);
            if (d.contains("shift")) {
                if (!d["shift"].is_array() || d["shift"].size() != 2) {
                    throw std::runtime_error("key 'shift' must be a 2-element array");
                }
                tf.shift = {d["shift"][0].get<double>(), d["shift"][1].get<double>()};
            }
            cfg.synthetic.domains.push_back(tf);
        }
    }
}

void parse_model_section(const json& obj, ExperimentConfig& cfg) {
    check_keys(obj, {"hidden", "latent_dim"}, "model");
    cfg.pipeline.model.hidden = static_cast<std::size_t>(
        get_integer(obj, "hidden", static_cast<long long>(cfg.pipeline.model.hidden)));
    cfg.pipeline.model.latent = static_cast<std::size_t>(
        get_integer(obj, "latent_dim", static_cast<long long>(cfg.pipeline.model.latent)));
}

void parse_rounds_section(const json& obj, ExperimentConfig& cfg) {
    check_keys(obj, {"rounds", "local_epochs", "lambda_di", "method", "use_di", "use_importance"},
               "rounds");
    auto& rc = cfg.pipeline.round;
    rc.rounds = static_cast<int>(get_integer(obj, "rounds", rc.rounds));
    rc.local_epochs = static_cast<int>(get_integer(obj, "local_epochs", rc.local_epochs));
    rc.lambda_di = get_number(obj, "lambda_di", rc.lambda_di);
    const std::string method = get_string(obj, "method", "lsi");
    if (method == "lsi") {
        rc.method = federation::Method::lsi;
    } else if (method == "fedavg") {
        rc.method = federation::Method::fedavg;
    } else {
        throw std::runtime_error("key 'method' must be 'lsi' or 'fedavg'");
    }
    rc.use_di = get_bool(obj, "use_di", rc.use_di);
    rc.use_importance = get_bool(obj, "use_importance", rc.use_importance);
}

void parse_train_section(const json& obj, ExperimentConfig& cfg) {
    check_keys(obj, {"lr", "momentum", "weight_decay", "batch"}, "train");
    auto& t = cfg.pipeline.train;
    t.lr = get_number(obj, "lr", t.lr);
    t.momentum = get_number(obj, "momentum", t.momentum);
    t.weight_decay = get_number(obj, "weight_decay", t.weight_decay);
    t.batch = static_cast<std::size_t>(get_integer(obj, "batch", static_cast<long long>(t.batch)));
}

void parse_synth_section(const json& obj, ExperimentConfig& cfg) {
    check_keys(obj, {"lambda_bn", "lambda_norm", "lr", "steps", "batch", "samples_per_client"},
               "synth");
    auto& s = cfg.pipeline.synth;
    s.lambda_bn = get_number(obj, "lambda_bn", s.lambda_bn);
    s.lambda_norm = get_number(obj, "lambda_norm", s.lambda_norm);
    s.lr = get_number(obj, "lr", s.lr);
    s.steps = static_cast<int>(get_integer(obj, "steps", s.steps));
    s.batch = static_cast<std::size_t>(get_integer(obj, "batch", static_cast<long long>(s.batch)));
    s.samples_per_client = static_cast<std::size_t>(get_integer(
        obj, "samples_per_client", static_cast<long long>(s.samples_per_client)));
}

void parse_gan_section(const json& obj, ExperimentConfig& cfg) {
    check_keys(obj,
               {"lambda_clsg", "lambda_rec", "lambda_clsd", "gen_lr", "disc_lr", "steps", "batch",
                "hidden", "dropout", "leaky_slope"},
               "gan");
    auto& g = cfg.pipeline.gan;
    g.lambda_clsg = get_number(obj, "lambda_clsg", g.lambda_clsg);
    g.lambda_rec = get_number(obj, "lambda_rec", g.lambda_rec);
    g.lambda_clsd = get_number(obj, "lambda_clsd", g.lambda_clsd);
    g.gen_lr = get_number(obj, "gen_lr", g.gen_lr);
    g.disc_lr = get_number(obj, "disc_lr", g.disc_lr);
    g.steps = static_cast<int>(get_integer(obj, "steps", g.steps));
    g.batch = static_cast<std::size_t>(get_integer(obj, "batch", static_cast<long long>(g.batch)));
    g.hidden = static_cast<std::size_t>(
        get_integer(obj, "hidden", static_cast<long long>(g.hidden)));
    g.dropout = get_number(obj, "dropout", g.dropout);
    g.leaky_slope = get_number(obj, "leaky_slope", g.leaky_slope);
}

void parse_eval_section(const json& obj, ExperimentConfig& cfg) {
    check_keys(obj, {"unseen", "val_fraction"}, "eval");
    cfg.val_fraction = get_number(obj, "val_fraction", cfg.val_fraction);
    if (obj.contains("unseen")) {
        const auto& u = obj["unseen"];
        if (u.is_string()) {
            if (u.get<std::string>() != "all") {
                throw std::runtime_error("key 'unseen' must be a domain id or \"all\"");
            }
            cfg.unseen_all = true;
        } else if (u.is_number_integer()) {
            cfg.unseen_all = false;
            cfg.unseen_id = u.get<int>();
        } else {
            throw std::runtime_error("key 'unseen' must be a domain id or \"all\"");
        }
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    if (csv_path.empty()) {
        synthetic.validate();
    }
    pipeline.round.validate();
    pipeline.synth.validate();
    pipeline.gan.validate();
    if (pipeline.train.lr <= 0.0) {
        throw std::runtime_error("train.lr must be > 0");
    }
    if (pipeline.train.batch == 0) {
        throw std::runtime_error("train.batch must be >= 1");
    }
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw std::runtime_error("eval.val_fraction must be in [0, 1)");
    }
    if (seeds.empty()) {
        throw std::runtime_error("seeds must be nonempty");
    }
    if (pipeline.threads < 0) {
        throw std::runtime_error("threads must be >= 0");
    }
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.synthetic.classes = 2;
    cfg.synthetic.domains = {
        {.angle_deg = 0.0}, {.angle_deg = 30.0}, {.angle_deg = 60.0}, {.angle_deg = 90.0}};
    cfg.synthetic.noise_sigma = 0.45;
    cfg.synthetic.samples_per_domain = 300;
    cfg.synthetic.ambient_dim = 20;
    return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
    json root;
    try {
        root = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("malformed config document: ") + e.what());
    }
    if (!root.is_object()) {
        throw std::runtime_error("config document must be a JSON object");
    }
    check_keys(root,
               {"data", "model", "rounds", "train", "synth", "gan", "eval", "seeds", "out_dir",
                "threads", "transport"},
               "config root");

    ExperimentConfig cfg = default_config();
    if (root.contains("data")) {
        parse_data_section(root["data"], cfg);
    }
    if (root.contains("model")) {
        parse_model_section(root["model"], cfg);
    }
    if (root.contains("rounds")) {
        parse_rounds_section(root["rounds"], cfg);
    }
    if (root.contains("train")) {
        parse_train_section(root["train"], cfg);
    }
    if (root.contains("synth")) {
        parse_synth_section(root["synth"], cfg);
    }
    if (root.contains("gan")) {
        parse_gan_section(root["gan"], cfg);
    }
    if (root.contains("eval")) {
        parse_eval_section(root["eval"], cfg);
    }
    if (root.contains("seeds")) {
        if (!root["seeds"].is_array() || root["seeds"].empty()) {
            throw std::runtime_error("key 'seeds' must be a nonempty array");
        }
        cfg.seeds.clear();
        for (const auto& s : root["seeds"]) {
            if (!s.is_number_integer()) {
                throw std::runtime_error("key 'seeds' must hold integers");
            }
            cfg.seeds.push_back(s.get<std::uint64_t>());
        }
    }
    cfg.out_dir = get_string(root, "out_dir", cfg.out_dir);
    cfg.pipeline.threads =
        static_cast<int>(get_integer(root, "threads", cfg.pipeline.threads));
    const std::string transport = get_string(root, "transport", "memory");
    if (transport == "memory") {
        cfg.pipeline.transport = transport::TransportKind::memory;
    } else if (transport == "socket") {
        cfg.pipeline.transport = transport::TransportKind::socket;
    } else {
        throw std::runtime_error("key 'transport' must be 'memory' or 'socket'");
    }

    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace fedlsi::report
