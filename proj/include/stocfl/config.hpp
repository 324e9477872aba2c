#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stocfl/dataset.hpp"
#include "stocfl/error.hpp"
#include "stocfl/federated.hpp"

namespace stocfl {

enum class AlgorithmKind { stocfl, fedavg, fedprox, ditto, ifca };

inline const char* to_string(AlgorithmKind k) {
    switch (k) {
        case AlgorithmKind::stocfl: return "stocfl";
        case AlgorithmKind::fedavg: return "fedavg";
        case AlgorithmKind::fedprox: return "fedprox";
        case AlgorithmKind::ditto: return "ditto";
        case AlgorithmKind::ifca: return "ifca";
    }
    return "?";
}

/// Fully validated experiment description: which scenario to generate,
/// which algorithm to run with which training knobs, and where output
/// goes. Produced by parse_config; every field holds either a file value
/// or its documented default.
struct ExperimentConfig {
    ScenarioKind scenario_kind = ScenarioKind::iid;
    int num_classes = 10;
    int feature_dim = 20;
    double class_separation = 8.0;
    int clients_per_cluster = 20;
    int samples_per_client = 50;
    int num_clients = 10;  // iid scenarios only; others derive their count
    double test_fraction = 0.2;
    std::vector<int> shifts = {0, 3, 6, 9};
    int num_rotations = 4;
    std::vector<std::vector<int>> label_groups = {{0, 1, 2}, {3, 4}, {5, 6}, {7, 8, 9}};
    std::string images_path;  // both set: load the IDX pair instead of
    std::string labels_path;  // synthesizing a base dataset

    AlgorithmKind algorithm = AlgorithmKind::stocfl;
    TrainConfig train;
    std::vector<int> hidden_dims;  // empty = plain multinomial logistic model

    std::string out_dir = "out";
    bool dump_representations = false;

    std::uint64_t seed = 0;
};

namespace detail {

struct RawEntry {
    std::string value;
    int line = 0;
};

inline const std::array<const char*, 31> kKnownKeys = {
    "scenario.kind",          "scenario.num_classes",    "scenario.feature_dim",
    "scenario.class_separation", "scenario.clients_per_cluster", "scenario.samples_per_client",
    "scenario.num_clients",   "scenario.test_fraction",  "scenario.shifts",
    "scenario.num_rotations", "scenario.label_groups",   "scenario.images",
    "scenario.labels",        "algorithm.kind",          "train.eta",
    "train.lambda",           "train.tau",               "train.rounds",
    "train.sample_rate",      "train.sample_count",      "train.epochs",
    "train.batch_size",       "train.hidden_dims",       "train.ifca_models",
    "train.equal_weights",    "train.anchor_seed",       "run.seed",
    "run.workers",            "output.dir",              "output.dump_representations",
    "output.timing"};

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

class ConfigReader {
  public:
    explicit ConfigReader(std::map<std::string, RawEntry> entries) : entries_(std::move(entries)) {}

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? fallback : it->second.value;
    }

    int get_int(const std::string& key, int fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        try {
            std::size_t used = 0;
            int v = std::stoi(it->second.value, &used);
            if (used != it->second.value.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw config_error(key + ": expected an integer, got '" + it->second.value + "'",
                               it->second.line);
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        try {
            std::size_t used = 0;
            double v = std::stod(it->second.value, &used);
            if (used != it->second.value.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw config_error(key + ": expected a number, got '" + it->second.value + "'",
                               it->second.line);
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        try {
            std::size_t used = 0;
            unsigned long long v = std::stoull(it->second.value, &used);
            if (used != it->second.value.size()) throw std::invalid_argument("");
            return static_cast<std::uint64_t>(v);
        } catch (const std::exception&) {
            throw config_error(key + ": expected a non-negative integer, got '" + it->second.value +
                                   "'",
                               it->second.line);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        const std::string& v = it->second.value;
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw config_error(key + ": expected true/false, got '" + v + "'", it->second.line);
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        if (trim(it->second.value).empty()) return {};
        std::vector<int> out;
        std::stringstream ss(it->second.value);
        std::string piece;
        while (std::getline(ss, piece, ',')) {
            piece = trim(piece);
            try {
                std::size_t used = 0;
                out.push_back(std::stoi(piece, &used));
                if (used != piece.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw config_error(key + ": expected a comma-separated integer list", it->second.line);
            }
        }
        if (out.empty())
            throw config_error(key + ": expected a comma-separated integer list", it->second.line);
        return out;
    }

    // Groups of integer lists, e.g. "0,1,2;3,4" -> {{0,1,2},{3,4}}.
    std::vector<std::vector<int>> get_group_list(const std::string& key,
                                                 std::vector<std::vector<int>> fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        std::vector<std::vector<int>> out;
        std::stringstream ss(it->second.value);
        std::string group;
        while (std::getline(ss, group, ';')) {
            std::vector<int> one;
            std::stringstream gs(group);
            std::string piece;
            while (std::getline(gs, piece, ',')) {
                piece = trim(piece);
                try {
                    std::size_t used = 0;
                    one.push_back(std::stoi(piece, &used));
                    if (used != piece.size()) throw std::invalid_argument("");
                } catch (const std::exception&) {
                    throw config_error(key + ": expected groups like '0,1;2,3'", it->second.line);
                }
            }
            if (one.empty())
                throw config_error(key + ": expected groups like '0,1;2,3'", it->second.line);
            out.push_back(std::move(one));
        }
        if (out.empty())
            throw config_error(key + ": expected groups like '0,1;2,3'", it->second.line);
        return out;
    }

    int line_of(const std::string& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? 0 : it->second.line;
    }

  private:
    std::map<std::string, RawEntry> entries_;
};

}  // namespace detail

/// Parse the flat `section.key = value` configuration text. '#' starts a
/// comment, blank lines are skipped, unknown or duplicate keys are errors,
/// and a key seen nowhere takes its documented default. Every value is
/// validated here so later stages can assume a well-formed config.
inline ExperimentConfig parse_config_text(const std::string& text) {
    std::map<std::string, detail::RawEntry> entries;
    std::stringstream ss(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(ss, raw)) {
        ++line_no;
        std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::string line = detail::trim(raw);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("expected 'key = value', got '" + line + "'", line_no);
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        bool known = false;
        for (const char* k : detail::kKnownKeys)
            if (key == k) known = true;
        if (!known) throw config_error("unknown key '" + key + "'", line_no);
        if (entries.count(key)) throw config_error("duplicate key '" + key + "'", line_no);
        entries[key] = {value, line_no};
    }

    detail::ConfigReader rd(std::move(entries));
    ExperimentConfig cfg;

    std::string kind = rd.get_string("scenario.kind", "");
    if (kind == "pathological") cfg.scenario_kind = ScenarioKind::pathological;
    else if (kind == "rotated") cfg.scenario_kind = ScenarioKind::rotated;
    else if (kind == "shifted") cfg.scenario_kind = ScenarioKind::shifted;
    else if (kind == "hybrid") cfg.scenario_kind = ScenarioKind::hybrid;
    else if (kind == "iid") cfg.scenario_kind = ScenarioKind::iid;
    else if (kind.empty()) throw config_error("scenario.kind is required");
    else throw config_error("scenario.kind: unknown scenario '" + kind + "'", rd.line_of("scenario.kind"));

    cfg.num_classes = rd.get_int("scenario.num_classes", cfg.num_classes);
    if (cfg.num_classes < 2)
        throw config_error("scenario.num_classes must be >= 2", rd.line_of("scenario.num_classes"));
    cfg.feature_dim = rd.get_int("scenario.feature_dim", cfg.feature_dim);
    if (cfg.feature_dim < 2)
        throw config_error("scenario.feature_dim must be >= 2", rd.line_of("scenario.feature_dim"));
    cfg.class_separation = rd.get_double("scenario.class_separation", cfg.class_separation);
    if (!(cfg.class_separation > 0.0))
        throw config_error("scenario.class_separation must be > 0",
                           rd.line_of("scenario.class_separation"));
    cfg.clients_per_cluster = rd.get_int("scenario.clients_per_cluster", cfg.clients_per_cluster);
    if (cfg.clients_per_cluster < 1)
        throw config_error("scenario.clients_per_cluster must be >= 1",
                           rd.line_of("scenario.clients_per_cluster"));
    cfg.samples_per_client = rd.get_int("scenario.samples_per_client", cfg.samples_per_client);
    if (cfg.samples_per_client < 2)
        throw config_error("scenario.samples_per_client must be >= 2",
                           rd.line_of("scenario.samples_per_client"));
    cfg.num_clients = rd.get_int("scenario.num_clients", cfg.num_clients);
    if (cfg.num_clients < 1)
        throw config_error("scenario.num_clients must be >= 1", rd.line_of("scenario.num_clients"));
    cfg.test_fraction = rd.get_double("scenario.test_fraction", cfg.test_fraction);
    if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
        throw config_error("scenario.test_fraction must be in (0, 1)",
                           rd.line_of("scenario.test_fraction"));
    cfg.shifts = rd.get_int_list("scenario.shifts", cfg.shifts);
    if (cfg.shifts.empty())
        throw config_error("scenario.shifts must be non-empty", rd.line_of("scenario.shifts"));
    cfg.num_rotations = rd.get_int("scenario.num_rotations", cfg.num_rotations);
    if (cfg.num_rotations < 2)
        throw config_error("scenario.num_rotations must be >= 2", rd.line_of("scenario.num_rotations"));
    cfg.label_groups = rd.get_group_list("scenario.label_groups", cfg.label_groups);
    cfg.images_path = rd.get_string("scenario.images", "");
    cfg.labels_path = rd.get_string("scenario.labels", "");
    if (cfg.images_path.empty() != cfg.labels_path.empty())
        throw config_error("scenario.images and scenario.labels must be set together");
    if (!cfg.images_path.empty() && cfg.scenario_kind == ScenarioKind::hybrid)
        throw config_error("hybrid scenarios are synthetic-only; scenario.images is not supported");

    std::string algo = rd.get_string("algorithm.kind", "");
    if (algo == "stocfl") cfg.algorithm = AlgorithmKind::stocfl;
    else if (algo == "fedavg") cfg.algorithm = AlgorithmKind::fedavg;
    else if (algo == "fedprox") cfg.algorithm = AlgorithmKind::fedprox;
    else if (algo == "ditto") cfg.algorithm = AlgorithmKind::ditto;
    else if (algo == "ifca") cfg.algorithm = AlgorithmKind::ifca;
    else if (algo.empty()) throw config_error("algorithm.kind is required");
    else throw config_error("algorithm.kind: unknown algorithm '" + algo + "'", rd.line_of("algorithm.kind"));

    cfg.train.eta = rd.get_double("train.eta", cfg.train.eta);
    if (!(cfg.train.eta > 0.0)) throw config_error("train.eta must be > 0", rd.line_of("train.eta"));
    cfg.train.lambda = rd.get_double("train.lambda", cfg.train.lambda);
    if (cfg.train.lambda < 0.0)
        throw config_error("train.lambda must be >= 0", rd.line_of("train.lambda"));
    cfg.train.tau = rd.get_double("train.tau", cfg.train.tau);
    cfg.train.rounds = rd.get_int("train.rounds", cfg.train.rounds);
    if (cfg.train.rounds < 1) throw config_error("train.rounds must be >= 1", rd.line_of("train.rounds"));
    cfg.train.sample_rate = rd.get_double("train.sample_rate", cfg.train.sample_rate);
    if (!(cfg.train.sample_rate > 0.0 && cfg.train.sample_rate <= 1.0))
        throw config_error("train.sample_rate must be in (0, 1]", rd.line_of("train.sample_rate"));
    cfg.train.sample_count = rd.get_int("train.sample_count", cfg.train.sample_count);
    if (cfg.train.sample_count < 0)
        throw config_error("train.sample_count must be >= 0", rd.line_of("train.sample_count"));
    cfg.train.local_epochs = rd.get_int("train.epochs", cfg.train.local_epochs);
    if (cfg.train.local_epochs < 1)
        throw config_error("train.epochs must be >= 1", rd.line_of("train.epochs"));
    cfg.train.batch_size = rd.get_int("train.batch_size", cfg.train.batch_size);
    if (cfg.train.batch_size < 0)
        throw config_error("train.batch_size must be >= 0 (0 = full batch)",
                           rd.line_of("train.batch_size"));
    cfg.hidden_dims = rd.get_int_list("train.hidden_dims", cfg.hidden_dims);
    for (int h : cfg.hidden_dims)
        if (h < 1) throw config_error("train.hidden_dims entries must be >= 1",
                                      rd.line_of("train.hidden_dims"));
    cfg.train.ifca_models = rd.get_int("train.ifca_models", cfg.train.ifca_models);
    if (cfg.train.ifca_models < 1)
        throw config_error("train.ifca_models must be >= 1", rd.line_of("train.ifca_models"));
    cfg.train.equal_weights = rd.get_bool("train.equal_weights", cfg.train.equal_weights);
    cfg.train.anchor_seed = rd.get_u64("train.anchor_seed", cfg.train.anchor_seed);

    cfg.seed = rd.get_u64("run.seed", cfg.seed);
    cfg.train.seed = cfg.seed;
    cfg.train.workers = rd.get_int("run.workers", cfg.train.workers);
    if (cfg.train.workers < 1)
        throw config_error("run.workers must be >= 1", rd.line_of("run.workers"));

    cfg.out_dir = rd.get_string("output.dir", cfg.out_dir);
    cfg.dump_representations = rd.get_bool("output.dump_representations", cfg.dump_representations);
    cfg.train.record_timing = rd.get_bool("output.timing", cfg.train.record_timing);
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace stocfl
