#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "stocfl/clustering.hpp"
#include "stocfl/error.hpp"
#include "stocfl/metrics.hpp"
#include "stocfl/model.hpp"
#include "stocfl/rng.hpp"

namespace stocfl {

/// Knobs for one federated run. sample_count takes precedence over
/// sample_rate when positive. batch_size 0 means full-batch epochs.
/// anchor_seed 0 means the representation anchor is the initial global
/// model; any other value draws an independent anchor.
struct TrainConfig {
    double eta = 0.1;
    double lambda = 0.05;
    double tau = 0.5;
    int rounds = 50;
    double sample_rate = 0.1;
    int sample_count = 0;
    int local_epochs = 5;
    int batch_size = 0;
    bool equal_weights = false;
    int workers = 1;
    int ifca_models = 2;
    bool record_timing = false;
    std::uint64_t seed = 0;
    std::uint64_t anchor_seed = 0;
};

/// What one sampled client sends back: its take on the global model (plain
/// SGD) and on its cluster model (proximal SGD), plus its shard size for
/// weighting.
struct ClientUpdate {
    int client_id = -1;
    ModelParams updated_global;
    ModelParams updated_cluster;
    int sample_count = 0;
};

namespace detail {

// Seed-stream tags: one fixed constant per purpose keeps the client
// sampling, minibatch, model-init, and anchor streams independent.
inline constexpr std::uint64_t kSampleTag = 0x5A3Bu;
inline constexpr std::uint64_t kBatchTag = 0xBA7Cu;
inline constexpr std::uint64_t kModelTag = 0x301Du;
inline constexpr std::uint64_t kAnchorTag = 0xA0C0u;

// Epoch's worth of batches. Full-batch mode yields one empty subset (the
// gradient routines read an empty subset as "the whole shard"), drawing
// nothing from the RNG; minibatch mode reshuffles every epoch.
inline std::vector<std::vector<int>> batch_schedule(int n, int batch_size, std::uint64_t seed) {
    if (batch_size <= 0) return {{}};
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(perm);
    std::vector<std::vector<int>> batches;
    for (int at = 0; at < n; at += batch_size) {
        int hi = std::min(at + batch_size, n);
        batches.emplace_back(perm.begin() + at, perm.begin() + hi);
    }
    return batches;
}

// E epochs of plain SGD. This single routine backs the global half of the
// client procedure and the FedAvg/Ditto-global/IFCA local solvers, so
// their trajectories agree to the bit whenever inputs and seeds agree.
inline void sgd_epochs(ModelParams& params, const DatasetShard& shard, double eta, int epochs,
                       int batch_size, std::uint64_t seed) {
    for (int e = 0; e < epochs; ++e) {
        auto batches = batch_schedule(shard.size(), batch_size, derive_seed(seed, static_cast<std::uint64_t>(e)));
        for (const auto& batch : batches) {
            std::vector<double> g = gradient(params, shard, batch);
            for (std::size_t i = 0; i < params.values.size(); ++i) params.values[i] -= eta * g[i];
        }
    }
}

// E epochs of SGD with a proximal pull toward a fixed anchor. lambda 0
// takes the plain path above so the two are indistinguishable then.
inline void prox_sgd_epochs(ModelParams& params, const ModelParams& anchor,
                            const DatasetShard& shard, double eta, double lambda, int epochs,
                            int batch_size, std::uint64_t seed) {
    if (lambda == 0.0) {
        sgd_epochs(params, shard, eta, epochs, batch_size, seed);
        return;
    }
    for (int e = 0; e < epochs; ++e) {
        auto batches = batch_schedule(shard.size(), batch_size, derive_seed(seed, static_cast<std::uint64_t>(e)));
        for (const auto& batch : batches) {
            std::vector<double> g = gradient(params, shard, batch);
            for (std::size_t i = 0; i < params.values.size(); ++i)
                params.values[i] -= eta * (g[i] + lambda * (params.values[i] - anchor.values[i]));
        }
    }
}

// Weighted mean in the given (ascending-client) order. All-equal inputs
// short-circuit to an exact copy: averaging must not perturb a consensus.
inline ModelParams weighted_mean_models(const std::vector<const ModelParams*>& models,
                                        const std::vector<double>& weights) {
    if (models.empty()) throw value_error("weighted mean of zero models");
    if (models.size() != weights.size()) throw dimension_error("weighted mean: weight count mismatch");
    bool all_same = true;
    for (std::size_t i = 1; i < models.size() && all_same; ++i) {
        if (models[i]->values != models[0]->values) all_same = false;
        if (!(models[i]->spec == models[0]->spec)) throw dimension_error("weighted mean: spec mismatch");
    }
    if (all_same) return *models[0];

    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw value_error("weighted mean: weights must be positive");
        total += w;
    }
    ModelParams out;
    out.spec = models[0]->spec;
    out.values.assign(models[0]->values.size(), 0.0);
    for (std::size_t m = 0; m < models.size(); ++m)
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] += weights[m] * models[m]->values[i];
    for (double& v : out.values) v /= total;
    return out;
}

// Run fn(0..n-1) across up to `workers` threads; any exception is
// re-thrown on the caller's thread after the pool drains.
template <typename Fn>
inline void parallel_for(int n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto body = [&] {
        for (int i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    int t = std::min(workers, n);
    pool.reserve(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace detail

/// Everything the server carries between rounds.
struct ServerState {
    ModelParams global_model;
    std::map<int, ModelParams> cluster_models;
    ClusterPartition partition;
    int round = 0;
};

/// Uniform without-replacement draw of this round's participants, in
/// ascending client-id order. Deterministic in (config seed, round).
inline std::vector<int> sample_clients(int num_clients, int round, const TrainConfig& cfg) {
    int m = cfg.sample_count > 0
                ? cfg.sample_count
                : static_cast<int>(std::lround(cfg.sample_rate * static_cast<double>(num_clients)));
    if (m < 1) m = 1;
    if (m > num_clients) throw value_error("sample_clients: sample size exceeds client count");
    Rng rng(derive_seed(cfg.seed, detail::kSampleTag, static_cast<std::uint64_t>(round)));
    return rng.sample_without_replacement(num_clients, m);
}

/// One client's round of work: the cluster model takes proximal SGD pulled
/// toward the received global model (the anchor stays fixed through all
/// epochs), and the client's copy of the global model takes the same
/// schedule of plain SGD. Both halves share one batch seed, so they see
/// identical minibatch orderings.
inline ClientUpdate client_update(const ModelParams& omega, const ModelParams& theta,
                                  const DatasetShard& shard, const TrainConfig& cfg,
                                  std::uint64_t batch_seed, int client_id = -1) {
    detail::check_compat(omega, shard);
    if (!(theta.spec == omega.spec)) throw dimension_error("client_update: model shape mismatch");
    ClientUpdate up;
    up.client_id = client_id;
    up.sample_count = shard.size();
    up.updated_cluster = theta;
    detail::prox_sgd_epochs(up.updated_cluster, omega, shard, cfg.eta, cfg.lambda,
                            cfg.local_epochs, cfg.batch_size, batch_seed);
    up.updated_global = omega;
    detail::sgd_epochs(up.updated_global, shard, cfg.eta, cfg.local_epochs, cfg.batch_size,
                       batch_seed);
    return up;
}

/// Sample-count-weighted mean of the clients' global halves, accumulated
/// in ascending client-id order (callers pass updates already sorted).
inline ModelParams aggregate_global(const std::vector<ClientUpdate>& updates,
                                    bool equal_weights = false) {
    if (updates.empty()) throw value_error("aggregate_global: no updates");
    std::vector<const ModelParams*> models;
    std::vector<double> weights;
    for (const auto& up : updates) {
        models.push_back(&up.updated_global);
        weights.push_back(equal_weights ? 1.0 : static_cast<double>(up.sample_count));
    }
    return detail::weighted_mean_models(models, weights);
}

/// Per cluster, the weighted mean of that round's member updates replaces
/// the cluster model; clusters nobody represented this round are left
/// alone. A lone updater's model is adopted verbatim.
inline void aggregate_cluster(const ClusterPartition& partition,
                              std::map<int, ModelParams>& cluster_models,
                              const std::vector<ClientUpdate>& updates,
                              bool equal_weights = false) {
    std::map<int, std::pair<std::vector<const ModelParams*>, std::vector<double>>> by_cluster;
    for (const auto& up : updates) {
        int cid = cluster_of_client(partition, up.client_id);
        if (cid < 0)
            throw value_error("aggregate_cluster: client " + std::to_string(up.client_id) +
                              " not in any cluster");
        auto& [models, weights] = by_cluster[cid];
        models.push_back(&up.updated_cluster);
        weights.push_back(equal_weights ? 1.0 : static_cast<double>(up.sample_count));
    }
    for (auto& [cid, mw] : by_cluster)
        cluster_models[cid] = detail::weighted_mean_models(mw.first, mw.second);
}

/// Fold cluster models along the merge log: member-count-weighted average
/// of the two sides, absorbed entry removed. Identical models collapse
/// without any arithmetic.
inline void merge_cluster_models(std::map<int, ModelParams>& cluster_models,
                                 const std::vector<MergeEvent>& log) {
    for (const auto& ev : log) {
        auto kept = cluster_models.find(ev.kept_id);
        auto gone = cluster_models.find(ev.absorbed_id);
        if (kept == cluster_models.end() || gone == cluster_models.end())
            throw value_error("merge_cluster_models: merge log names unknown cluster");
        if (kept->second.values != gone->second.values) {
            std::vector<const ModelParams*> models{&kept->second, &gone->second};
            std::vector<double> weights{static_cast<double>(ev.kept_count_before),
                                        static_cast<double>(ev.absorbed_count)};
            kept->second = detail::weighted_mean_models(models, weights);
        }
        cluster_models.erase(gone);
    }
}

/// Pooled accuracy of one model over every client's test shard.
inline std::optional<double> pooled_accuracy(const ModelParams& model,
                                             const std::vector<DatasetShard>& test_shards) {
    long long hit = 0, total = 0;
    for (const auto& shard : test_shards) {
        if (shard.size() == 0) continue;
        hit += static_cast<long long>(std::lround(accuracy(model, shard) * shard.size()));
        total += shard.size();
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(total);
}

/// Pooled accuracy where each seen client is scored by its cluster's
/// model; clients outside the partition (never sampled) are not scored.
inline std::optional<double> member_accuracy(const ClusterPartition& partition,
                                             const std::map<int, ModelParams>& cluster_models,
                                             const std::vector<DatasetShard>& test_shards) {
    long long hit = 0, total = 0;
    for (const auto& c : partition.clusters) {
        auto model = cluster_models.find(c.id);
        if (model == cluster_models.end()) continue;
        for (int client : c.members) {
            if (client < 0 || client >= static_cast<int>(test_shards.size())) continue;
            const auto& shard = test_shards[static_cast<std::size_t>(client)];
            if (shard.size() == 0) continue;
            hit += static_cast<long long>(std::lround(accuracy(model->second, shard) * shard.size()));
            total += shard.size();
        }
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(total);
}

/// Pooled accuracy over a per-client model table (personalized baselines).
inline std::optional<double> personal_accuracy(const std::map<int, ModelParams>& personal,
                                               const std::vector<DatasetShard>& test_shards) {
    long long hit = 0, total = 0;
    for (const auto& [client, model] : personal) {
        if (client < 0 || client >= static_cast<int>(test_shards.size())) continue;
        const auto& shard = test_shards[static_cast<std::size_t>(client)];
        if (shard.size() == 0) continue;
        hit += static_cast<long long>(std::lround(accuracy(model, shard) * shard.size()));
        total += shard.size();
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(total);
}

namespace detail {

// ARI of the current partition against ground truth, restricted to seen
// clients (ascending id). Disengaged until somebody has been sampled.
inline std::optional<double> partition_ari(const ClusterPartition& partition,
                                           const std::vector<int>& true_cluster) {
    std::vector<int> truth, pred;
    auto assign = assignment_vector(partition, static_cast<int>(true_cluster.size()));
    for (std::size_t c = 0; c < true_cluster.size(); ++c) {
        if (assign[c] < 0) continue;
        truth.push_back(true_cluster[c]);
        pred.push_back(assign[c]);
    }
    if (truth.empty()) return std::nullopt;
    return adjusted_rand_index(truth, pred);
}

}  // namespace detail

using StocflObserver = std::function<void(const ServerState&)>;

/// The clustered training loop. Each round: sample participants, fold the
/// newly seen ones in as singletons (seeded with the current global model),
/// merge clusters whose representation similarity strictly exceeds tau,
/// merge their models accordingly, then run the two-track client procedure
/// on the broadcast pair (global, own-cluster model) and aggregate both
/// tracks by sample count. The representation anchor is the initial global
/// model unless the config requests an independent draw.
inline std::pair<ServerState, std::vector<RoundMetrics>> run_stocfl(
    const FederatedScenario& scenario, const ModelSpec& spec, const TrainConfig& cfg,
    const StocflObserver& observer = nullptr) {
    int n = scenario.num_clients();
    if (n == 0) throw value_error("run_stocfl: scenario has no clients");

    ServerState state;
    state.global_model = init_params(spec, derive_seed(cfg.seed, detail::kModelTag, 0));
    ModelParams anchor = cfg.anchor_seed == 0
                             ? state.global_model
                             : init_params(spec, derive_seed(cfg.anchor_seed, detail::kAnchorTag));

    std::vector<RoundMetrics> history;
    history.reserve(static_cast<std::size_t>(cfg.rounds));
    for (int round = 0; round < cfg.rounds; ++round) {
        auto start = std::chrono::steady_clock::now();
        state.round = round;
        std::vector<int> sampled = sample_clients(n, round, cfg);

        int first_new_id = state.partition.next_id;
        ingest_round(state.partition, sampled, anchor, scenario.train_shards);
        for (const auto& c : state.partition.clusters)
            if (c.id >= first_new_id) state.cluster_models.emplace(c.id, state.global_model);

        auto log = merge_step(state.partition, cfg.tau);
        merge_cluster_models(state.cluster_models, log);

        std::vector<ClientUpdate> updates(sampled.size());
        detail::parallel_for(static_cast<int>(sampled.size()), cfg.workers, [&](int i) {
            int client = sampled[static_cast<std::size_t>(i)];
            int cid = cluster_of_client(state.partition, client);
            updates[static_cast<std::size_t>(i)] = client_update(
                state.global_model, state.cluster_models.at(cid),
                scenario.train_shards[static_cast<std::size_t>(client)], cfg,
                derive_seed(cfg.seed, detail::kBatchTag, static_cast<std::uint64_t>(round),
                            static_cast<std::uint64_t>(client)),
                client);
        });

        state.global_model = aggregate_global(updates, cfg.equal_weights);
        aggregate_cluster(state.partition, state.cluster_models, updates, cfg.equal_weights);

        RoundMetrics row;
        row.round = round;
        row.k_tilde = state.partition.size();
        row.clustering_objective = clustering_objective(state.partition);
        row.global_acc = pooled_accuracy(state.global_model, scenario.test_shards);
        row.cluster_acc = member_accuracy(state.partition, state.cluster_models, scenario.test_shards);
        row.ari = detail::partition_ari(state.partition, scenario.true_cluster);
        if (cfg.record_timing)
            row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start)
                              .count();
        history.push_back(std::move(row));
        if (observer) observer(state);
    }
    return {std::move(state), std::move(history)};
}

enum class BaselineKind { fedavg, fedprox, ditto, ifca };

inline const char* to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::fedavg: return "fedavg";
        case BaselineKind::fedprox: return "fedprox";
        case BaselineKind::ditto: return "ditto";
        case BaselineKind::ifca: return "ifca";
    }
    return "?";
}

/// Final artifacts of a baseline run. `models` holds per-client personal
/// models for ditto and the hypothesis models for ifca; `assignment` maps
/// client -> chosen model for ifca (-1 while unseen).
struct BaselineResult {
    BaselineKind kind = BaselineKind::fedavg;
    ModelParams global_model;
    std::map<int, ModelParams> models;
    std::vector<int> assignment;
};

using BaselineObserver =
    std::function<void(int round, const ModelParams& global, const std::map<int, ModelParams>& models)>;

/// Reference algorithms under the same sampling, batching, and weighting
/// regime as the clustered loop, so runs with aligned seeds are directly
/// comparable. fedavg: weighted mean of plain-SGD locals. fedprox: locals
/// add a proximal pull toward the broadcast server model. ditto: a
/// personal per-client model takes the proximal track while the shared
/// model trains exactly as fedavg. ifca: every round each participant
/// adopts whichever hypothesis model has the lowest loss on its shard,
/// updates it, and the adopters' versions are averaged per model.
inline std::pair<BaselineResult, std::vector<RoundMetrics>> run_baseline(
    BaselineKind kind, const FederatedScenario& scenario, const ModelSpec& spec,
    const TrainConfig& cfg, const BaselineObserver& observer = nullptr) {
    int n = scenario.num_clients();
    if (n == 0) throw value_error("run_baseline: scenario has no clients");

    BaselineResult result;
    result.kind = kind;
    result.global_model = init_params(spec, derive_seed(cfg.seed, detail::kModelTag, 0));
    result.assignment.assign(static_cast<std::size_t>(n), -1);
    if (kind == BaselineKind::ifca) {
        if (cfg.ifca_models < 1) throw value_error("run_baseline: ifca needs at least one model");
        for (int j = 0; j < cfg.ifca_models; ++j)
            result.models.emplace(j, init_params(spec, derive_seed(cfg.seed, detail::kModelTag,
                                                                   static_cast<std::uint64_t>(j))));
    }

    std::vector<RoundMetrics> history;
    history.reserve(static_cast<std::size_t>(cfg.rounds));
    for (int round = 0; round < cfg.rounds; ++round) {
        auto start = std::chrono::steady_clock::now();
        std::vector<int> sampled = sample_clients(n, round, cfg);

        if (kind == BaselineKind::ditto)
            for (int client : sampled)
                result.models.emplace(client, result.global_model);

        struct Local {
            int client = -1;
            int choice = -1;
            ModelParams global_track;
            ModelParams personal_track;
            double weight = 0.0;
        };
        std::vector<Local> locals(sampled.size());
        detail::parallel_for(static_cast<int>(sampled.size()), cfg.workers, [&](int i) {
            int client = sampled[static_cast<std::size_t>(i)];
            const auto& shard = scenario.train_shards[static_cast<std::size_t>(client)];
            std::uint64_t batch_seed =
                derive_seed(cfg.seed, detail::kBatchTag, static_cast<std::uint64_t>(round),
                            static_cast<std::uint64_t>(client));
            Local loc;
            loc.client = client;
            loc.weight = cfg.equal_weights ? 1.0 : static_cast<double>(shard.size());
            switch (kind) {
                case BaselineKind::fedavg:
                    loc.global_track = result.global_model;
                    detail::sgd_epochs(loc.global_track, shard, cfg.eta, cfg.local_epochs,
                                       cfg.batch_size, batch_seed);
                    break;
                case BaselineKind::fedprox:
                    loc.global_track = result.global_model;
                    detail::prox_sgd_epochs(loc.global_track, result.global_model, shard, cfg.eta,
                                            cfg.lambda, cfg.local_epochs, cfg.batch_size, batch_seed);
                    break;
                case BaselineKind::ditto:
                    loc.global_track = result.global_model;
                    detail::sgd_epochs(loc.global_track, shard, cfg.eta, cfg.local_epochs,
                                       cfg.batch_size, batch_seed);
                    loc.personal_track = result.models.at(client);
                    detail::prox_sgd_epochs(loc.personal_track, result.global_model, shard, cfg.eta,
                                            cfg.lambda, cfg.local_epochs, cfg.batch_size, batch_seed);
                    break;
                case BaselineKind::ifca: {
                    double best = 0.0;
                    for (int j = 0; j < cfg.ifca_models; ++j) {
                        double loss = forward_loss(result.models.at(j), shard);
                        if (j == 0 || loss < best) {
                            best = loss;
                            loc.choice = j;
                        }
                    }
                    loc.global_track = result.models.at(loc.choice);
                    detail::sgd_epochs(loc.global_track, shard, cfg.eta, cfg.local_epochs,
                                       cfg.batch_size, batch_seed);
                    break;
                }
            }
            locals[static_cast<std::size_t>(i)] = std::move(loc);
        });

        if (kind == BaselineKind::ifca) {
            std::map<int, std::pair<std::vector<const ModelParams*>, std::vector<double>>> adopters;
            for (const auto& loc : locals) {
                result.assignment[static_cast<std::size_t>(loc.client)] = loc.choice;
                auto& [models, weights] = adopters[loc.choice];
                models.push_back(&loc.global_track);
                weights.push_back(loc.weight);
            }
            for (auto& [j, mw] : adopters)
                result.models[j] = detail::weighted_mean_models(mw.first, mw.second);
        } else {
            std::vector<const ModelParams*> models;
            std::vector<double> weights;
            for (const auto& loc : locals) {
                models.push_back(&loc.global_track);
                weights.push_back(loc.weight);
            }
            result.global_model = detail::weighted_mean_models(models, weights);
            if (kind == BaselineKind::ditto)
                for (auto& loc : locals) result.models[loc.client] = std::move(loc.personal_track);
        }

        RoundMetrics row;
        row.round = round;
        switch (kind) {
            case BaselineKind::fedavg:
            case BaselineKind::fedprox:
                row.global_acc = pooled_accuracy(result.global_model, scenario.test_shards);
                break;
            case BaselineKind::ditto:
                row.global_acc = pooled_accuracy(result.global_model, scenario.test_shards);
                row.cluster_acc = personal_accuracy(result.models, scenario.test_shards);
                break;
            case BaselineKind::ifca: {
                std::map<int, ModelParams> per_client;
                std::vector<int> truth, pred;
                std::set<int> adopted;
                for (int c = 0; c < n; ++c) {
                    int j = result.assignment[static_cast<std::size_t>(c)];
                    if (j < 0) continue;
                    per_client.emplace(c, result.models.at(j));
                    truth.push_back(scenario.true_cluster[static_cast<std::size_t>(c)]);
                    pred.push_back(j);
                    adopted.insert(j);
                }
                row.cluster_acc = personal_accuracy(per_client, scenario.test_shards);
                if (!truth.empty()) {
                    row.ari = adjusted_rand_index(truth, pred);
                    row.k_tilde = static_cast<int>(adopted.size());
                }
                // global column reports the best single hypothesis model
                std::optional<double> best;
                for (const auto& [j, model] : result.models) {
                    auto acc = pooled_accuracy(model, scenario.test_shards);
                    if (acc && (!best || *acc > *best)) best = acc;
                }
                row.global_acc = best;
                break;
            }
        }
        if (cfg.record_timing)
            row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start)
                              .count();
        history.push_back(std::move(row));
        if (observer) observer(round, result.global_model, result.models);
    }
    return {std::move(result), std::move(history)};
}

}  // namespace stocfl
