#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "stocfl/config.hpp"
#include "stocfl/dataset.hpp"
#include "stocfl/federated.hpp"
#include "stocfl/metrics.hpp"

namespace stocfl {

namespace detail {

inline constexpr std::uint64_t kScenarioTag = 0x5CE4u;
inline constexpr std::uint64_t kSplitTag = 0x5717u;
inline constexpr std::uint64_t kGradcheckTag = 0x64ADu;

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) {
    return v ? fmt_double(*v) : std::string();
}

}  // namespace detail

/// Materialize the configured scenario: synthesize (or load) the base
/// pool, carve it into Non-IID clients, and hold out a per-client test
/// slice. All randomness is derived from the run seed, so a config
/// describes exactly one dataset.
inline FederatedScenario build_scenario(const ExperimentConfig& cfg) {
    std::uint64_t scen_seed = derive_seed(cfg.seed, detail::kScenarioTag);
    std::uint64_t split_seed = derive_seed(cfg.seed, detail::kSplitTag);

    int total_clients = 0;
    switch (cfg.scenario_kind) {
        case ScenarioKind::pathological:
            total_clients = static_cast<int>(cfg.label_groups.size()) * cfg.clients_per_cluster;
            break;
        case ScenarioKind::rotated:
            total_clients = cfg.num_rotations * cfg.clients_per_cluster;
            break;
        case ScenarioKind::shifted:
            total_clients = static_cast<int>(cfg.shifts.size()) * cfg.clients_per_cluster;
            break;
        case ScenarioKind::hybrid:
            total_clients = 2 * cfg.clients_per_cluster;
            break;
        case ScenarioKind::iid:
            total_clients = cfg.num_clients;
            break;
    }

    FederatedScenario sc;
    if (cfg.scenario_kind == ScenarioKind::hybrid) {
        int per_domain = cfg.samples_per_client * cfg.clients_per_cluster;
        BaseDataset a = make_base_dataset(derive_seed(scen_seed, 0), per_domain, cfg.feature_dim,
                                          cfg.num_classes, cfg.class_separation);
        BaseDataset b = make_base_dataset(derive_seed(scen_seed, 1), per_domain, cfg.feature_dim,
                                          cfg.num_classes, cfg.class_separation);
        sc = partition_hybrid(a, b, cfg.clients_per_cluster, scen_seed);
    } else {
        BaseDataset base;
        if (!cfg.images_path.empty()) {
            base = load_idx(cfg.images_path, cfg.labels_path);
        } else {
            base = make_base_dataset(derive_seed(scen_seed, 0), cfg.samples_per_client * total_clients,
                                     cfg.feature_dim, cfg.num_classes, cfg.class_separation);
        }
        switch (cfg.scenario_kind) {
            case ScenarioKind::pathological:
                sc = partition_pathological(base, cfg.label_groups, cfg.clients_per_cluster, scen_seed);
                break;
            case ScenarioKind::rotated:
                sc = partition_rotated(base, cfg.num_rotations, cfg.clients_per_cluster, scen_seed);
                break;
            case ScenarioKind::shifted:
                sc = partition_shifted(base, cfg.shifts, cfg.clients_per_cluster, scen_seed);
                break;
            case ScenarioKind::iid:
                sc = partition_iid(base, cfg.num_clients, scen_seed);
                break;
            case ScenarioKind::hybrid:
                break;  // handled above
        }
    }
    return train_test_split(sc, cfg.test_fraction, split_seed);
}

/// Model shape implied by a scenario and the configured hidden widths.
inline ModelSpec model_spec_for(const ExperimentConfig& cfg, const FederatedScenario& sc) {
    ModelSpec spec;
    spec.input_dim = sc.train_shards.empty() ? cfg.feature_dim : sc.train_shards[0].feature_dim;
    spec.hidden_dims = cfg.hidden_dims;
    spec.num_classes = sc.num_classes;
    validate(spec);
    return spec;
}

inline void write_metrics_csv(const std::string& path, const std::vector<RoundMetrics>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write " + path);
    out << "round,k_tilde,clustering_objective,global_acc,cluster_acc,ari,wall_ms\n";
    for (const auto& r : rows) {
        out << r.round << ',' << (r.k_tilde ? std::to_string(*r.k_tilde) : std::string()) << ','
            << detail::fmt_opt(r.clustering_objective) << ',' << detail::fmt_opt(r.global_acc) << ','
            << detail::fmt_opt(r.cluster_acc) << ',' << detail::fmt_opt(r.ari) << ',' << r.wall_ms
            << '\n';
    }
}

/// assigned entries below zero serialize as an empty field (client never
/// assigned anywhere, or the algorithm has no clustering notion).
inline void write_clusters_csv(const std::string& path, const std::vector<int>& truth,
                               const std::vector<int>& assigned) {
    if (truth.size() != assigned.size()) throw dimension_error("write_clusters_csv: length mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write " + path);
    out << "client_id,true_cluster,assigned_cluster\n";
    for (std::size_t c = 0; c < truth.size(); ++c) {
        out << c << ',' << truth[c] << ',';
        if (assigned[c] >= 0) out << assigned[c];
        out << '\n';
    }
}

inline void write_representations_csv(const std::string& path, const ClusterPartition& partition,
                                      const std::vector<int>& truth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write " + path);
    std::size_t dim = partition.client_rep.empty() ? 0 : partition.client_rep.begin()->second.size();
    out << "client_id,true_cluster,assigned_cluster";
    for (std::size_t v = 0; v < dim; ++v) out << ",v" << v;
    out << '\n';
    auto assign = assignment_vector(partition, static_cast<int>(truth.size()));
    for (const auto& [client, rep] : partition.client_rep) {
        out << client << ','
            << (client >= 0 && client < static_cast<int>(truth.size())
                    ? std::to_string(truth[static_cast<std::size_t>(client)])
                    : std::string())
            << ',' << assign[static_cast<std::size_t>(client)];
        for (double v : rep) out << ',' << detail::fmt_double(v);
        out << '\n';
    }
}

/// Facts the acceptance tooling reads off a finished run.
struct RunSummary {
    std::optional<int> k_tilde;
    std::optional<double> objective;
    std::optional<double> ari;
    std::optional<double> purity;
    std::optional<double> global_acc;
    std::optional<double> cluster_acc;

    /// One parseable line: `summary key=value ...`, engaged fields only.
    std::string to_line() const {
        std::string s = "summary";
        if (k_tilde) s += " k_tilde=" + std::to_string(*k_tilde);
        if (objective) s += " objective=" + detail::fmt_double(*objective);
        if (ari) s += " ari=" + detail::fmt_double(*ari);
        if (purity) s += " purity=" + detail::fmt_double(*purity);
        if (global_acc) s += " global_acc=" + detail::fmt_double(*global_acc);
        if (cluster_acc) s += " cluster_acc=" + detail::fmt_double(*cluster_acc);
        return s;
    }
};

namespace detail {

// Truth/prediction pairs restricted to assigned clients.
inline void assigned_pairs(const std::vector<int>& truth, const std::vector<int>& assigned,
                           std::vector<int>& t_out, std::vector<int>& p_out) {
    for (std::size_t c = 0; c < truth.size(); ++c) {
        if (assigned[c] < 0) continue;
        t_out.push_back(truth[c]);
        p_out.push_back(assigned[c]);
    }
}

}  // namespace detail

/// Run the configured experiment end to end and emit metrics.csv plus
/// clusters.csv (and representations.csv when requested) under the output
/// directory. Identical config and seed produce byte-identical files.
inline RunSummary run_experiment(const ExperimentConfig& cfg) {
    FederatedScenario scenario = build_scenario(cfg);
    ModelSpec spec = model_spec_for(cfg, scenario);
    std::filesystem::create_directories(cfg.out_dir);
    auto out_path = [&](const char* name) {
        return (std::filesystem::path(cfg.out_dir) / name).string();
    };

    RunSummary summary;
    std::vector<RoundMetrics> history;
    std::vector<int> assigned(static_cast<std::size_t>(scenario.num_clients()), -1);

    if (cfg.algorithm == AlgorithmKind::stocfl) {
        auto [state, rounds] = run_stocfl(scenario, spec, cfg.train);
        history = std::move(rounds);
        assigned = assignment_vector(state.partition, scenario.num_clients());
        std::vector<int> t, p;
        detail::assigned_pairs(scenario.true_cluster, assigned, t, p);
        if (!t.empty()) {
            summary.ari = adjusted_rand_index(t, p);
            summary.purity = purity(t, p);
        }
        summary.k_tilde = state.partition.size();
        summary.objective = clustering_objective(state.partition);
        if (cfg.dump_representations)
            write_representations_csv(out_path("representations.csv"), state.partition,
                                      scenario.true_cluster);
    } else {
        BaselineKind kind = BaselineKind::fedavg;
        switch (cfg.algorithm) {
            case AlgorithmKind::fedavg: kind = BaselineKind::fedavg; break;
            case AlgorithmKind::fedprox: kind = BaselineKind::fedprox; break;
            case AlgorithmKind::ditto: kind = BaselineKind::ditto; break;
            case AlgorithmKind::ifca: kind = BaselineKind::ifca; break;
            case AlgorithmKind::stocfl: break;  // handled above
        }
        auto [result, rounds] = run_baseline(kind, scenario, spec, cfg.train);
        history = std::move(rounds);
        if (kind == BaselineKind::ifca) {
            assigned = result.assignment;
            std::vector<int> t, p;
            detail::assigned_pairs(scenario.true_cluster, assigned, t, p);
            if (!t.empty()) {
                summary.ari = adjusted_rand_index(t, p);
                summary.purity = purity(t, p);
            }
        }
    }

    if (!history.empty()) {
        const RoundMetrics& last = history.back();
        summary.global_acc = last.global_acc;
        summary.cluster_acc = last.cluster_acc;
        if (!summary.k_tilde) summary.k_tilde = last.k_tilde;
    }
    write_metrics_csv(out_path("metrics.csv"), history);
    write_clusters_csv(out_path("clusters.csv"), scenario.true_cluster, assigned);
    return summary;
}

/// Ingest every client at once and merge, without any training rounds;
/// writes clusters.csv and representations.csv. Answers "what would the
/// clustering alone do on this scenario".
inline RunSummary cluster_only(const ExperimentConfig& cfg) {
    FederatedScenario scenario = build_scenario(cfg);
    ModelSpec spec = model_spec_for(cfg, scenario);
    std::filesystem::create_directories(cfg.out_dir);
    auto out_path = [&](const char* name) {
        return (std::filesystem::path(cfg.out_dir) / name).string();
    };

    ModelParams anchor =
        cfg.train.anchor_seed == 0
            ? init_params(spec, derive_seed(cfg.train.seed, detail::kModelTag, 0))
            : init_params(spec, derive_seed(cfg.train.anchor_seed, detail::kAnchorTag));
    ClusterPartition partition;
    std::vector<int> everyone(static_cast<std::size_t>(scenario.num_clients()));
    for (int c = 0; c < scenario.num_clients(); ++c) everyone[static_cast<std::size_t>(c)] = c;
    ingest_round(partition, everyone, anchor, scenario.train_shards);
    merge_step(partition, cfg.train.tau);

    std::vector<int> assigned = assignment_vector(partition, scenario.num_clients());
    RunSummary summary;
    summary.k_tilde = partition.size();
    summary.objective = clustering_objective(partition);
    std::vector<int> t, p;
    detail::assigned_pairs(scenario.true_cluster, assigned, t, p);
    if (!t.empty()) {
        summary.ari = adjusted_rand_index(t, p);
        summary.purity = purity(t, p);
    }
    write_clusters_csv(out_path("clusters.csv"), scenario.true_cluster, assigned);
    write_representations_csv(out_path("representations.csv"), partition, scenario.true_cluster);
    return summary;
}

/// One analytic-vs-numeric gradient comparison case.
struct GradcheckCase {
    int case_id = 0;
    bool hidden_layer = false;
    double max_rel_err = 0.0;
};

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::vector<GradcheckCase> cases;
};

/// 20 seeded models and shards (half plain logistic, half one hidden
/// layer), each checked coordinate-by-coordinate against central finite
/// differences. The error is relative with an absolute floor: tiny
/// gradient coordinates are judged by absolute deviation instead of
/// exploding the ratio. `perturb` is a fault-injection hook for negative
/// tests: it shifts the first analytic coordinate so the check must fail.
inline GradcheckReport gradcheck_suite(double step = 1e-5, double perturb = 0.0) {
    GradcheckReport report;
    for (int case_id = 0; case_id < 20; ++case_id) {
        Rng rng(derive_seed(detail::kGradcheckTag, static_cast<std::uint64_t>(case_id)));
        ModelSpec spec;
        spec.input_dim = 2 + static_cast<int>(rng.bounded(9));  // 2..10
        spec.num_classes = 2 + static_cast<int>(rng.bounded(3));
        bool hidden = case_id % 2 == 1;
        if (hidden) spec.hidden_dims = {2 + static_cast<int>(rng.bounded(5))};

        DatasetShard shard;
        shard.feature_dim = spec.input_dim;
        int n = 3 + static_cast<int>(rng.bounded(14));  // 3..16
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < spec.input_dim; ++j) shard.features.push_back(rng.normal());
            shard.labels.push_back(static_cast<int>(rng.bounded(static_cast<std::uint64_t>(spec.num_classes))));
        }

        ModelParams params = init_params(spec, derive_seed(detail::kGradcheckTag, 0xF00Du,
                                                           static_cast<std::uint64_t>(case_id)));
        std::vector<double> analytic = gradient(params, shard);
        std::vector<double> numeric = finite_diff_gradient(params, shard, step);
        if (perturb != 0.0 && !analytic.empty()) analytic[0] += perturb;

        double worst = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            double denom = std::max(std::abs(numeric[i]), 1e-2);
            worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
        }
        report.cases.push_back({case_id, hidden, worst});
        report.max_rel_err = std::max(report.max_rel_err, worst);
    }
    return report;
}

}  // namespace stocfl
