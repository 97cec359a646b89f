#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hfl/common.hpp"
#include "hfl/data.hpp"
#include "hfl/federation.hpp"
#include "hfl/metrics.hpp"
#include "hfl/nn.hpp"

// Config-driven experiment harness: preprocess persists encoded datasets and
// client shards, train runs one of {central, individual, hfl} and emits a run
// directory, compare and curves turn run artifacts into tables.
//
// Reproducibility is the product: all three seeds are mandatory, manifests
// embed a config hash, and everything except timing.csv is byte-deterministic
// for a fixed (config, seeds) pair no matter the thread count.
namespace hfl::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Mode { central, individual, hfl };
enum class Source { csv, synth };

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::central: return "central";
        case Mode::individual: return "individual";
        case Mode::hfl: return "hfl";
    }
    return "?";
}

inline std::string to_string(Source s) { return s == Source::csv ? "csv" : "synth"; }

struct ExperimentConfig {
    Mode mode = Mode::hfl;
    Source source = Source::synth;
    std::vector<std::string> csv_paths;
    std::string label_column = "label";
    data::SynthSpec synth;  // synth.seed / synth.n_clients are filled from the fields below

    std::uint32_t n_clients = 4;
    std::uint32_t n_edges = 2;
    std::vector<std::size_t> hidden_dims{256, 256};
    nn::Hyperparams hp;
    std::uint32_t itrs = 50;
    bool early_stop = true;
    fed::EarlyStopConfig es;
    bool weighted_aggregation = false;

    double train_fraction = 0.9;
    double val_fraction = 0.1;
    double sparse_threshold = 0.5;

    std::optional<std::uint64_t> seed_data;
    std::optional<std::uint64_t> seed_model;
    std::optional<std::uint64_t> seed_shuffle;

    std::string label;  // empty -> derived from mode and topology
    std::string out_dir = "out";
    std::string data_dir;  // empty -> out_dir
    unsigned threads = 0;  // 0 -> available cores; HFL_THREADS caps it

    std::string effective_label() const {
        if (!label.empty()) return label;
        if (mode == Mode::hfl)
            return "hfl_" + std::to_string(n_clients) + "c_" + std::to_string(n_edges) + "e";
        return to_string(mode);
    }

    std::string effective_data_dir() const { return data_dir.empty() ? out_dir : data_dir; }

    void validate() const {
        if (!seed_data || !seed_model || !seed_shuffle)
            throw ConfigError("seeds are mandatory: set seed_data, seed_model and seed_shuffle");
        if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
        if (n_edges < 1) throw ConfigError("n_edges must be >= 1");
        if (hidden_dims.empty()) throw ConfigError("hidden_dims must name at least one layer");
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw ConfigError("train_fraction must be in (0, 1)");
        if (!(val_fraction >= 0.0 && val_fraction < 1.0))
            throw ConfigError("val_fraction must be in [0, 1)");
        if (source == Source::csv && csv_paths.empty())
            throw ConfigError("source=csv requires csv_paths");
        hp.validate();
        es.validate();
    }
};

// ---------------------------------------------------------------------------
// config text format: `key = value` lines, '#' comments, lists comma-separated
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(v);
    while (std::getline(ss, item, ',')) {
        const std::string t = data::detail::trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

}  // namespace detail

inline void apply_config_kv(ExperimentConfig& cfg, const std::string& key,
                            const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_u64;
    if (key == "mode") {
        if (value == "central")
            cfg.mode = Mode::central;
        else if (value == "individual")
            cfg.mode = Mode::individual;
        else if (value == "hfl")
            cfg.mode = Mode::hfl;
        else
            throw ConfigError("mode must be central, individual or hfl (got '" + value + "')");
    } else if (key == "source") {
        if (value == "csv")
            cfg.source = Source::csv;
        else if (value == "synth")
            cfg.source = Source::synth;
        else
            throw ConfigError("source must be csv or synth (got '" + value + "')");
    } else if (key == "csv_paths") {
        cfg.csv_paths = detail::split_list(value);
    } else if (key == "label_column") {
        cfg.label_column = value;
    } else if (key == "synth_n") {
        cfg.synth.n = parse_u64(key, value);
    } else if (key == "synth_d") {
        cfg.synth.d = parse_u64(key, value);
    } else if (key == "synth_clusters") {
        cfg.synth.n_clusters = parse_u64(key, value);
    } else if (key == "synth_anomaly_clusters") {
        cfg.synth.n_anomaly_clusters = parse_u64(key, value);
    } else if (key == "synth_anomaly_fraction") {
        cfg.synth.anomaly_fraction = parse_double(key, value);
    } else if (key == "synth_label_noise") {
        cfg.synth.label_noise = parse_double(key, value);
    } else if (key == "synth_cluster_skew") {
        cfg.synth.cluster_skew = parse_double(key, value);
    } else if (key == "n_clients") {
        cfg.n_clients = static_cast<std::uint32_t>(parse_u64(key, value));
    } else if (key == "n_edges") {
        cfg.n_edges = static_cast<std::uint32_t>(parse_u64(key, value));
    } else if (key == "hidden_dims") {
        cfg.hidden_dims.clear();
        for (const auto& item : detail::split_list(value))
            cfg.hidden_dims.push_back(parse_u64(key, item));
    } else if (key == "learning_rate") {
        cfg.hp.learning_rate = parse_double(key, value);
    } else if (key == "batch_size") {
        cfg.hp.batch_size = parse_u64(key, value);
    } else if (key == "local_epochs") {
        cfg.hp.local_epochs = parse_u64(key, value);
    } else if (key == "threshold") {
        cfg.hp.classification_threshold = parse_double(key, value);
    } else if (key == "itrs") {
        cfg.itrs = static_cast<std::uint32_t>(parse_u64(key, value));
    } else if (key == "early_stop") {
        cfg.early_stop = parse_bool(key, value);
    } else if (key == "patience") {
        cfg.es.patience = static_cast<std::uint32_t>(parse_u64(key, value));
    } else if (key == "min_delta") {
        cfg.es.min_delta = parse_double(key, value);
    } else if (key == "weighted_aggregation") {
        cfg.weighted_aggregation = parse_bool(key, value);
    } else if (key == "train_fraction") {
        cfg.train_fraction = parse_double(key, value);
    } else if (key == "val_fraction") {
        cfg.val_fraction = parse_double(key, value);
    } else if (key == "sparse_threshold") {
        cfg.sparse_threshold = parse_double(key, value);
    } else if (key == "seed_data") {
        cfg.seed_data = parse_u64(key, value);
    } else if (key == "seed_model") {
        cfg.seed_model = parse_u64(key, value);
    } else if (key == "seed_shuffle") {
        cfg.seed_shuffle = parse_u64(key, value);
    } else if (key == "label") {
        cfg.label = value;
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "data_dir") {
        cfg.data_dir = value;
    } else if (key == "threads") {
        cfg.threads = static_cast<unsigned>(parse_u64(key, value));
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

inline ExperimentConfig parse_config_text(const std::string& text,
                                          ExperimentConfig base = {}) {
    std::stringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = data::detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected `key = value`");
        apply_config_kv(base, data::detail::trim(line.substr(0, eq)),
                        data::detail::trim(line.substr(eq + 1)));
    }
    return base;
}

inline ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), std::move(base));
}

// Canonical key=value rendering of the semantic config. out_dir, data_dir and
// threads are excluded: they must not change results.
inline std::string canonical_config(const ExperimentConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["mode"] = to_string(cfg.mode);
    kv["source"] = to_string(cfg.source);
    {
        std::string joined;
        for (const auto& p : cfg.csv_paths) {
            if (!joined.empty()) joined += ',';
            joined += p;
        }
        kv["csv_paths"] = joined;
    }
    kv["label_column"] = cfg.label_column;
    kv["synth_n"] = std::to_string(cfg.synth.n);
    kv["synth_d"] = std::to_string(cfg.synth.d);
    kv["synth_clusters"] = std::to_string(cfg.synth.n_clusters);
    kv["synth_anomaly_clusters"] = std::to_string(cfg.synth.n_anomaly_clusters);
    kv["synth_anomaly_fraction"] = detail::fmt_double(cfg.synth.anomaly_fraction);
    kv["synth_label_noise"] = detail::fmt_double(cfg.synth.label_noise);
    kv["synth_cluster_skew"] = detail::fmt_double(cfg.synth.cluster_skew);
    kv["n_clients"] = std::to_string(cfg.n_clients);
    kv["n_edges"] = std::to_string(cfg.n_edges);
    {
        std::string joined;
        for (const auto d : cfg.hidden_dims) {
            if (!joined.empty()) joined += ',';
            joined += std::to_string(d);
        }
        kv["hidden_dims"] = joined;
    }
    kv["learning_rate"] = detail::fmt_double(cfg.hp.learning_rate);
    kv["batch_size"] = std::to_string(cfg.hp.batch_size);
    kv["local_epochs"] = std::to_string(cfg.hp.local_epochs);
    kv["threshold"] = detail::fmt_double(cfg.hp.classification_threshold);
    kv["itrs"] = std::to_string(cfg.itrs);
    kv["early_stop"] = cfg.early_stop ? "true" : "false";
    kv["patience"] = std::to_string(cfg.es.patience);
    kv["min_delta"] = detail::fmt_double(cfg.es.min_delta);
    kv["weighted_aggregation"] = cfg.weighted_aggregation ? "true" : "false";
    kv["train_fraction"] = detail::fmt_double(cfg.train_fraction);
    kv["val_fraction"] = detail::fmt_double(cfg.val_fraction);
    kv["sparse_threshold"] = detail::fmt_double(cfg.sparse_threshold);
    kv["seed_data"] = cfg.seed_data ? std::to_string(*cfg.seed_data) : "";
    kv["seed_model"] = cfg.seed_model ? std::to_string(*cfg.seed_model) : "";
    kv["seed_shuffle"] = cfg.seed_shuffle ? std::to_string(*cfg.seed_shuffle) : "";
    kv["label"] = cfg.effective_label();
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
    return buf;
}

// Thread budget: explicit config value or available cores, capped by the
// HFL_THREADS environment variable when set.
inline unsigned effective_threads(unsigned configured) {
    unsigned t = configured ? configured : std::max(1U, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("HFL_THREADS")) {
        try {
            const unsigned cap = static_cast<unsigned>(std::stoul(env));
            if (cap >= 1) t = std::min(t, cap);
        } catch (const std::exception&) {
            throw ConfigError(std::string("HFL_THREADS is not an integer: '") + env + "'");
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// data preparation
// ---------------------------------------------------------------------------

struct PreparedData {
    data::Dataset train_full;  // before shard remainder dropping
    data::Dataset test;
    std::vector<data::ClientShard> shards;
    std::vector<std::string> dropped_columns;
    std::optional<data::Encoder> encoder;
    std::size_t n_raw = 0;
};

// Stream ids for the seeded stages hanging off seed_data.
namespace seed_stream {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t partition = 2;
inline constexpr std::uint64_t validation = 3;
}  // namespace seed_stream

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
    cfg.validate();
    PreparedData out;
    const std::uint64_t seed = *cfg.seed_data;
    if (cfg.source == Source::csv) {
        data::RawTable raw = data::load_csv_many(cfg.csv_paths, cfg.label_column);
        out.n_raw = raw.n_rows();
        raw = data::drop_sparse_columns(raw, cfg.sparse_threshold, &out.dropped_columns);
        auto [train_raw, test_raw] =
            data::train_test_split(raw, cfg.train_fraction, mix_seed(seed, seed_stream::split));
        out.encoder = data::fit_encoder(train_raw);
        out.train_full = data::apply_encoder(train_raw, *out.encoder);
        out.test = data::apply_encoder(test_raw, *out.encoder);
        out.shards = data::partition_clients(out.train_full, cfg.n_clients,
                                             mix_seed(seed, seed_stream::partition));
        return out;
    }

    data::SynthSpec spec = cfg.synth;
    spec.seed = seed;
    spec.n_clients = cfg.n_clients;
    std::vector<std::uint32_t> affinity;
    data::Dataset all = data::synth_dataset(spec, &affinity);
    out.n_raw = all.n();
    const auto [train_idx, test_idx] =
        data::split_indices(all.n(), cfg.train_fraction, mix_seed(seed, seed_stream::split));
    out.train_full = data::detail::subset_rows(all, train_idx);
    out.test = data::detail::subset_rows(all, test_idx);
    if (!affinity.empty()) {
        std::vector<std::uint32_t> train_affinity;
        train_affinity.reserve(train_idx.size());
        for (const auto r : train_idx) train_affinity.push_back(affinity[r]);
        out.shards = data::shard_by_affinity(out.train_full, train_affinity, cfg.n_clients);
    } else {
        out.shards = data::partition_clients(out.train_full, cfg.n_clients,
                                             mix_seed(seed, seed_stream::partition));
    }
    return out;
}

// ---------------------------------------------------------------------------
// encoder persistence (structured JSON document)
// ---------------------------------------------------------------------------

inline json encoder_to_json(const data::Encoder& enc) {
    json cols = json::array();
    for (const auto& c : enc.columns) {
        json jc;
        jc["name"] = c.name;
        jc["numeric"] = c.numeric;
        if (c.numeric) {
            jc["mean"] = c.stats.mean;
            jc["stddev"] = c.stats.stddev;
            jc["median"] = c.stats.median;
            jc["constant"] = c.stats.constant;
        } else {
            jc["categories"] = c.categories;
        }
        cols.push_back(jc);
    }
    return json{{"columns", cols}};
}

inline data::Encoder encoder_from_json(const json& j) {
    data::Encoder enc;
    for (const auto& jc : j.at("columns")) {
        data::ColumnEncoding c;
        c.name = jc.at("name").get<std::string>();
        c.numeric = jc.at("numeric").get<bool>();
        if (c.numeric) {
            c.stats.mean = jc.at("mean").get<double>();
            c.stats.stddev = jc.at("stddev").get<double>();
            c.stats.median = jc.at("median").get<double>();
            c.stats.constant = jc.at("constant").get<bool>();
        } else {
            c.categories = jc.at("categories").get<std::vector<std::string>>();
        }
        enc.columns.push_back(std::move(c));
    }
    return enc;
}

// ---------------------------------------------------------------------------
// model checkpoint: magic "HFLM", layer specs, flat float32 parameters
// ---------------------------------------------------------------------------

inline void save_model(const std::string& path, const nn::Model& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write model file: " + path);
    os.write("HFLM", 4);
    os.put(1);  // version
    const auto& arch = model.arch();
    std::uint32_t n_layers = static_cast<std::uint32_t>(arch.size());
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((n_layers >> (8 * i)) & 0xffU));
    for (const auto& l : arch) {
        const auto in = static_cast<std::uint32_t>(l.in_dim);
        const auto outd = static_cast<std::uint32_t>(l.out_dim);
        for (int i = 0; i < 4; ++i) os.put(static_cast<char>((in >> (8 * i)) & 0xffU));
        for (int i = 0; i < 4; ++i) os.put(static_cast<char>((outd >> (8 * i)) & 0xffU));
        os.put(static_cast<char>(l.activation));
    }
    for (const float v : nn::get_params(model).values) data::detail::put_f32_le(os, v);
    if (!os) throw IoError("short write on model file: " + path);
}

inline nn::Model load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open model file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string_view(magic, 4) != "HFLM")
        throw DataError(path + ": not a model file (bad magic)");
    if (is.get() != 1) throw DataError(path + ": unsupported model version");
    std::uint32_t n_layers = 0;
    for (int i = 0; i < 4; ++i) n_layers |= static_cast<std::uint32_t>(is.get() & 0xff) << (8 * i);
    nn::Arch arch;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        std::uint32_t in = 0, outd = 0;
        for (int i = 0; i < 4; ++i) in |= static_cast<std::uint32_t>(is.get() & 0xff) << (8 * i);
        for (int i = 0; i < 4; ++i) outd |= static_cast<std::uint32_t>(is.get() & 0xff) << (8 * i);
        arch.push_back({in, outd, static_cast<nn::Activation>(is.get())});
    }
    nn::Model model = nn::init_model(arch, 0);
    nn::ParamVector pv;
    pv.layout_digest = nn::arch_digest(arch);
    pv.values.resize(nn::param_count(arch));
    for (auto& v : pv.values) v = data::detail::get_f32_le(is);
    if (!is) throw DataError(path + ": truncated model file");
    return nn::set_params(model, pv);
}

// ---------------------------------------------------------------------------
// run artifacts
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write file: " + path);
    os << content;
    if (!os) throw IoError("short write: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace detail

inline std::string history_csv(const fed::RoundHistory& history) {
    std::string out = "round,val_loss,accuracy,precision,recall,f1\n";
    char buf[160];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%u,%.10g,%.6f,%.6f,%.6f,%.6f\n", r.round, r.val_loss,
                      100.0 * r.eval.accuracy, 100.0 * r.eval.precision, 100.0 * r.eval.recall,
                      100.0 * r.eval.f1);
        out += buf;
    }
    return out;
}

inline std::string clients_csv(const fed::RoundHistory& history) {
    std::string out = "round,client,train_loss\n";
    char buf[96];
    for (const auto& r : history)
        for (std::size_t c = 0; c < r.client_losses.size(); ++c) {
            std::snprintf(buf, sizeof(buf), "%u,%zu,%.10g\n", r.round, c, r.client_losses[c]);
            out += buf;
        }
    return out;
}

inline std::string timing_csv(const fed::RoundHistory& history, double total_seconds) {
    std::string out = "round,seconds\n";
    char buf[64];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%u,%.6f\n", r.round, r.seconds);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "total,%.6f\n", total_seconds);
    out += buf;
    return out;
}

inline json config_to_json(const ExperimentConfig& cfg) {
    json j = json::object();
    std::stringstream ss(canonical_config(cfg));
    std::string line;
    while (std::getline(ss, line)) {
        const auto eq = line.find(" = ");
        j[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j;
}

struct RunResult {
    std::string dir;
    std::string run_label;
    fed::TrainOutcome outcome;
    metrics::MetricsReport final_eval;
    double train_seconds = 0.0;
};

namespace detail {

// One training run (any mode reduces to a topology plus shards) written out
// as manifest.json + history.csv + clients.csv + timing.csv + model.bin.
// seed_shuffle_override carries the per-client stream in individual mode; the
// manifest always records the user's configured seeds.
inline RunResult execute_run(const ExperimentConfig& cfg, const std::string& run_label,
                             const std::string& dir, const fed::Topology& topo,
                             fed::FederationData&& fdata,
                             std::optional<std::uint64_t> seed_shuffle_override = {}) {
    fed::RunConfig rc;
    const std::size_t d = fdata.shards.front().dim();
    rc.arch.push_back({d, cfg.hidden_dims[0], nn::Activation::relu});
    for (std::size_t i = 1; i < cfg.hidden_dims.size(); ++i)
        rc.arch.push_back({cfg.hidden_dims[i - 1], cfg.hidden_dims[i], nn::Activation::relu});
    rc.arch.push_back({cfg.hidden_dims.back(), 1, nn::Activation::sigmoid});
    rc.hp = cfg.hp;
    rc.itrs = cfg.itrs;
    rc.early_stop_enabled = cfg.early_stop;
    rc.early_stop = cfg.es;
    rc.seed_model = *cfg.seed_model;
    rc.seed_shuffle = seed_shuffle_override.value_or(*cfg.seed_shuffle);
    rc.weighted_aggregation = cfg.weighted_aggregation;
    rc.threads = effective_threads(cfg.threads);

    const auto t0 = std::chrono::steady_clock::now();
    fed::TrainOutcome outcome = fed::run_training(rc, topo, fdata);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RunResult res;
    res.dir = dir;
    res.run_label = run_label;
    res.train_seconds = seconds;
    res.final_eval = outcome.history.empty()
                         ? metrics::evaluate(outcome.model, fdata.evaluation,
                                             cfg.hp.classification_threshold)
                         : outcome.history[outcome.best_round].eval;
    res.outcome = std::move(outcome);

    fs::create_directories(dir);
    write_file(dir + "/history.csv", history_csv(res.outcome.history));
    write_file(dir + "/clients.csv", clients_csv(res.outcome.history));
    write_file(dir + "/timing.csv", timing_csv(res.outcome.history, seconds));
    save_model(dir + "/model.bin", res.outcome.model);

    json manifest;
    manifest["label"] = run_label;
    manifest["mode"] = to_string(cfg.mode);
    manifest["config"] = config_to_json(cfg);
    manifest["config_hash"] = config_hash(cfg);
    manifest["seeds"] = {{"data", *cfg.seed_data},
                         {"model", *cfg.seed_model},
                         {"shuffle", *cfg.seed_shuffle}};
    json shard_sizes = json::array();
    for (const auto& s : fdata.shards) shard_sizes.push_back(s.n());
    manifest["data"] = {{"n_validation", fdata.validation.n()},
                        {"n_evaluation", fdata.evaluation.n()},
                        {"shard_sizes", shard_sizes}};
    manifest["result"] = {{"rounds_run", res.outcome.history.size()},
                          {"best_round", res.outcome.best_round},
                          {"best_val_loss", res.outcome.best_val_loss},
                          {"accuracy", res.final_eval.accuracy},
                          {"precision", res.final_eval.precision},
                          {"recall", res.final_eval.recall},
                          {"f1", res.final_eval.f1},
                          {"threshold", res.final_eval.threshold},
                          {"degenerate", res.final_eval.degenerate}};
    manifest["files"] = {{"history", "history.csv"},
                         {"clients", "clients.csv"},
                         {"timing", "timing.csv"},
                         {"model", "model.bin"}};
    write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
    return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// preprocess command
// ---------------------------------------------------------------------------

struct PreprocessResult {
    PreparedData prepared;
    json manifest;
};

inline PreprocessResult cmd_preprocess(const ExperimentConfig& cfg) {
    PreprocessResult res;
    res.prepared = prepare_data(cfg);
    PreparedData& p = res.prepared;

    fs::create_directories(cfg.out_dir);
    data::save_dataset(cfg.out_dir + "/train.hfld", p.train_full);
    data::save_dataset(cfg.out_dir + "/test.hfld", p.test);
    for (const auto& s : p.shards)
        data::save_dataset(cfg.out_dir + "/shard_" + std::to_string(s.client_id) + ".hfld",
                           s.data);
    if (p.encoder)
        detail::write_file(cfg.out_dir + "/encoder.json",
                           encoder_to_json(*p.encoder).dump(2) + "\n");

    json shards = json::array();
    std::size_t shard_total = 0;
    for (const auto& s : p.shards) {
        shards.push_back({{"client", s.client_id}, {"n", s.data.n()}, {"pos_ratio", s.pos_ratio}});
        shard_total += s.data.n();
    }
    json m;
    m["source"] = to_string(cfg.source);
    m["config"] = config_to_json(cfg);
    m["config_hash"] = config_hash(cfg);
    m["n_raw"] = p.n_raw;
    m["n_train"] = p.train_full.n();
    m["n_test"] = p.test.n();
    m["n_features"] = p.train_full.dim();
    m["feature_names"] = p.train_full.feature_names;
    m["dropped_columns"] = p.dropped_columns;
    m["train_pos_ratio"] = p.train_full.pos_ratio();
    m["test_pos_ratio"] = p.test.pos_ratio();
    m["shards"] = shards;
    m["n_partition_dropped"] = p.train_full.n() - shard_total;
    m["n_clients"] = cfg.n_clients;
    res.manifest = m;
    detail::write_file(cfg.out_dir + "/preprocess_manifest.json", m.dump(2) + "\n");
    return res;
}

// ---------------------------------------------------------------------------
// train command
// ---------------------------------------------------------------------------

struct LoadedData {
    data::Dataset train_full;
    data::Dataset test;
    std::vector<data::Dataset> shards;
};

// Central mode passes need_shards = false: it trains on the full training
// set and neither reads the shard files nor cares how many there are.
inline LoadedData load_prepared(const std::string& data_dir, std::uint32_t n_clients,
                                bool need_shards = true) {
    const std::string manifest_path = data_dir + "/preprocess_manifest.json";
    if (!fs::exists(manifest_path))
        throw DataError("no preprocessed data in '" + data_dir + "' (missing " + manifest_path +
                        "); run `hfl preprocess` first");
    json m;
    try {
        m = json::parse(detail::read_file(manifest_path));
    } catch (const json::exception& e) {
        throw DataError(manifest_path + ": " + e.what());
    }
    LoadedData out;
    out.train_full = data::load_dataset(data_dir + "/train.hfld");
    out.test = data::load_dataset(data_dir + "/test.hfld");
    if (!need_shards) return out;
    const auto stored_clients = m.at("n_clients").get<std::uint32_t>();
    if (stored_clients != n_clients)
        throw ConfigError("preprocessed data has " + std::to_string(stored_clients) +
                          " shards but config asks for " + std::to_string(n_clients) +
                          " clients; re-run preprocess");
    for (std::uint32_t c = 0; c < n_clients; ++c)
        out.shards.push_back(data::load_dataset(data_dir + "/shard_" + std::to_string(c) + ".hfld"));
    return out;
}

namespace detail {

// Carves floor(n * fraction) seeded validation rows out of each shard;
// removed rows form the pooled validation set. Keeps the persisted shard
// files full size while the validation holdout never overlaps training rows.
inline std::pair<std::vector<data::Dataset>, data::Dataset> carve_validation(
    const std::vector<data::Dataset>& shards, double fraction, std::uint64_t seed) {
    std::vector<data::Dataset> train_shards;
    std::vector<std::size_t> val_rows;  // rebuilt per shard
    data::Dataset validation;
    bool first = true;
    for (std::size_t s = 0; s < shards.size(); ++s) {
        const auto k = static_cast<std::size_t>(
            std::floor(static_cast<double>(shards[s].n()) * fraction));
        std::vector<std::size_t> idx(shards[s].n());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(mix_seed(seed, 0x56414cULL + s));  // "VAL" + shard
        rng.shuffle(idx);
        std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        std::vector<std::size_t> keep(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
        std::sort(val.begin(), val.end());
        std::sort(keep.begin(), keep.end());
        if (keep.empty()) throw DataError("validation carve emptied shard " + std::to_string(s));
        train_shards.push_back(data::detail::subset_rows(shards[s], keep));
        data::Dataset vs = data::detail::subset_rows(shards[s], val);
        if (first) {
            validation = std::move(vs);
            first = false;
        } else {
            // append rows
            const std::size_t old_n = validation.n();
            Matrix merged(old_n + vs.n(), validation.dim());
            std::copy(validation.features.data.begin(), validation.features.data.end(),
                      merged.data.begin());
            std::copy(vs.features.data.begin(), vs.features.data.end(),
                      merged.data.begin() + static_cast<std::ptrdiff_t>(old_n * validation.dim()));
            validation.features = std::move(merged);
            validation.labels.insert(validation.labels.end(), vs.labels.begin(), vs.labels.end());
        }
    }
    if (validation.n() == 0) throw DataError("validation set is empty; raise val_fraction");
    return {std::move(train_shards), std::move(validation)};
}

}  // namespace detail

inline std::vector<RunResult> cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string data_dir = cfg.effective_data_dir();
    LoadedData loaded =
        load_prepared(data_dir, cfg.n_clients, /*need_shards=*/cfg.mode != Mode::central);
    const std::uint64_t val_seed = mix_seed(*cfg.seed_data, seed_stream::validation);

    std::vector<RunResult> results;
    if (cfg.mode == Mode::central) {
        std::vector<data::Dataset> whole{std::move(loaded.train_full)};
        auto [train_shards, validation] =
            detail::carve_validation(whole, cfg.val_fraction, val_seed);
        fed::FederationData fdata{std::move(train_shards), std::move(validation),
                                  std::move(loaded.test)};
        results.push_back(detail::execute_run(cfg, cfg.effective_label(), cfg.out_dir,
                                              fed::build_topology(1, 1), std::move(fdata)));
    } else if (cfg.mode == Mode::hfl) {
        auto [train_shards, validation] =
            detail::carve_validation(loaded.shards, cfg.val_fraction, val_seed);
        fed::FederationData fdata{std::move(train_shards), std::move(validation),
                                  std::move(loaded.test)};
        results.push_back(detail::execute_run(cfg, cfg.effective_label(), cfg.out_dir,
                                              fed::build_topology(cfg.n_clients, cfg.n_edges),
                                              std::move(fdata)));
    } else {
        // individual: every client trains alone on its shard, early-stopping
        // on its own carve, all evaluated on the shared test set
        for (std::uint32_t c = 0; c < cfg.n_clients; ++c) {
            std::vector<data::Dataset> one{loaded.shards[c]};
            auto [train_shards, validation] =
                detail::carve_validation(one, cfg.val_fraction, mix_seed(val_seed, c));
            fed::FederationData fdata{std::move(train_shards), std::move(validation), loaded.test};
            const std::string label = cfg.effective_label() + "_client" + std::to_string(c);
            results.push_back(detail::execute_run(cfg, label,
                                                  cfg.out_dir + "/client_" + std::to_string(c),
                                                  fed::build_topology(1, 1), std::move(fdata),
                                                  mix_seed(*cfg.seed_shuffle, c)));
        }
    }
    return results;
}

// ---------------------------------------------------------------------------
// compare command
// ---------------------------------------------------------------------------

struct CompareRow {
    std::string label;
    double accuracy_pct = 0.0;
    double precision_pct = 0.0;
    double recall_pct = 0.0;
    double f1_pct = 0.0;
    double seconds = -1.0;  // < 0 when no timing file was found
};

inline std::vector<CompareRow> cmd_compare(const std::vector<std::string>& manifest_paths) {
    if (manifest_paths.empty()) throw ConfigError("compare needs at least one manifest");
    std::vector<CompareRow> rows;
    for (const auto& path : manifest_paths) {
        json m;
        try {
            m = json::parse(detail::read_file(path));
            CompareRow row;
            row.label = m.at("label").get<std::string>();
            const auto& r = m.at("result");
            row.accuracy_pct = 100.0 * r.at("accuracy").get<double>();
            row.precision_pct = 100.0 * r.at("precision").get<double>();
            row.recall_pct = 100.0 * r.at("recall").get<double>();
            row.f1_pct = 100.0 * r.at("f1").get<double>();
            const fs::path timing = fs::path(path).parent_path() / "timing.csv";
            if (fs::exists(timing)) {
                std::stringstream ss(detail::read_file(timing.string()));
                std::string line;
                while (std::getline(ss, line))
                    if (line.rfind("total,", 0) == 0) row.seconds = std::stod(line.substr(6));
            }
            rows.push_back(std::move(row));
        } catch (const json::exception& e) {
            throw DataError(path + ": malformed manifest (" + std::string(e.what()) + ")");
        }
    }
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.label < b.label; });
    return rows;
}

inline std::string compare_csv(const std::vector<CompareRow>& rows) {
    std::string out = "label,accuracy,precision,recall,f1,seconds\n";
    char buf[224];
    for (const auto& r : rows) {
        if (r.seconds >= 0.0)
            std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f,%.2f,%.2f,%.2f\n", r.label.c_str(),
                          r.accuracy_pct, r.precision_pct, r.recall_pct, r.f1_pct, r.seconds);
        else
            std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f,%.2f,%.2f,\n", r.label.c_str(),
                          r.accuracy_pct, r.precision_pct, r.recall_pct, r.f1_pct);
        out += buf;
    }
    return out;
}

inline std::string compare_text(const std::vector<CompareRow>& rows) {
    std::size_t width = 10;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    char buf[288];
    std::snprintf(buf, sizeof(buf), "%-*s  %8s  %9s  %8s  %8s  %10s\n", static_cast<int>(width),
                  "experiment", "accuracy", "precision", "recall", "f1", "seconds");
    std::string out = buf;
    for (const auto& r : rows) {
        if (r.seconds >= 0.0)
            std::snprintf(buf, sizeof(buf), "%-*s  %8.2f  %9.2f  %8.2f  %8.2f  %10.2f\n",
                          static_cast<int>(width), r.label.c_str(), r.accuracy_pct,
                          r.precision_pct, r.recall_pct, r.f1_pct, r.seconds);
        else
            std::snprintf(buf, sizeof(buf), "%-*s  %8.2f  %9.2f  %8.2f  %8.2f  %10s\n",
                          static_cast<int>(width), r.label.c_str(), r.accuracy_pct,
                          r.precision_pct, r.recall_pct, r.f1_pct, "-");
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// curves command: melt run CSVs into long format for downstream plotting
// ---------------------------------------------------------------------------

inline std::string cmd_curves(const std::vector<std::string>& csv_paths,
                              std::size_t* warnings = nullptr) {
    if (csv_paths.empty()) throw ConfigError("curves needs at least one history CSV");
    std::string out = "run,round,metric,value\n";
    for (const auto& path : csv_paths) {
        const fs::path p(path);
        std::string run = p.parent_path().filename().string();
        if (run.empty()) run = p.stem().string();

        std::stringstream ss(detail::read_file(path));
        std::string line;
        if (!std::getline(ss, line)) throw DataError(path + ": empty CSV");
        const auto header = data::detail::split_csv_line(line);
        if (header.empty() || header[0] != "round")
            throw DataError(path + ": first column must be 'round'");
        std::size_t client_col = header.size();
        for (std::size_t i = 1; i < header.size(); ++i)
            if (header[i] == "client") client_col = i;

        std::size_t rows = 0;
        while (std::getline(ss, line)) {
            if (line.empty()) continue;
            const auto cells = data::detail::split_csv_line(line);
            if (cells.size() != header.size())
                throw DataError(path + ": ragged row '" + line + "'");
            ++rows;
            const std::string suffix =
                client_col < header.size() ? "_client" + cells[client_col] : "";
            for (std::size_t i = 1; i < cells.size(); ++i) {
                if (i == client_col) continue;
                out += run + "," + cells[0] + "," + header[i] + suffix + "," + cells[i] + "\n";
            }
        }
        if (rows == 0) {
            std::cerr << "warning: " << path << " has no data rows\n";
            if (warnings) ++*warnings;
        }
    }
    return out;
}

}  // namespace hfl::experiment
