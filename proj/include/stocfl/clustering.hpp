#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stocfl/error.hpp"
#include "stocfl/model.hpp"

namespace stocfl {

/// Client distribution fingerprint: the loss gradient at a shared anchor
/// model, scaled to unit length. Clients with similar data produce nearby
/// directions regardless of shard size; the anchor itself is never trained.
inline std::vector<double> extract_representation(const ModelParams& anchor,
                                                  const DatasetShard& shard) {
    std::vector<double> rep = gradient(anchor, shard);
    double norm = 0.0;
    for (double v : rep) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12)
        throw degenerate_shard_error("representation gradient is numerically zero");
    for (double& v : rep) v /= norm;
    return rep;
}

/// Cosine of the angle between two nonzero vectors, clamped to [-1, 1].
inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw dimension_error("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw value_error("cosine: zero vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// One cluster: stable id, member client ids, and the plain sum of member
/// representations. The sum is kept unnormalized so merges are exact
/// additions; cosine is scale-invariant, so comparisons are unaffected.
struct Cluster {
    int id = 0;
    std::vector<int> members;
    std::vector<double> rep_sum;
};

/// The server's view of who belongs together. Clusters are ordered by
/// ascending id; ids are never reused, so this is also creation order.
/// Every client that has ever been sampled appears in exactly one cluster
/// and keeps its representation cached (it is computed once, never
/// refreshed).
struct ClusterPartition {
    std::vector<Cluster> clusters;
    std::map<int, std::vector<double>> client_rep;
    std::set<int> seen;
    int next_id = 0;

    int size() const { return static_cast<int>(clusters.size()); }
};

/// Member-count average of a cluster's representation sum.
inline std::vector<double> rep_mean(const Cluster& c) {
    std::vector<double> out = c.rep_sum;
    double inv = 1.0 / static_cast<double>(c.members.size());
    for (double& v : out) v *= inv;
    return out;
}

/// Index into partition.clusters for a cluster id, -1 if retired.
inline int cluster_index(const ClusterPartition& p, int cluster_id) {
    for (std::size_t i = 0; i < p.clusters.size(); ++i)
        if (p.clusters[i].id == cluster_id) return static_cast<int>(i);
    return -1;
}

/// Cluster id owning a client, -1 if the client is unseen.
inline int cluster_of_client(const ClusterPartition& p, int client_id) {
    for (const auto& c : p.clusters)
        for (int m : c.members)
            if (m == client_id) return c.id;
    return -1;
}

/// Fold newly sampled clients into the partition, one singleton cluster
/// each. Clients seen in an earlier round are left untouched (their cached
/// representation stands). Processing order is ascending client id, so the
/// result is independent of the sampling set's ordering.
inline void ingest_round(ClusterPartition& p, const std::vector<int>& sampled,
                         const ModelParams& anchor, const std::vector<DatasetShard>& shards) {
    std::vector<int> ids = sampled;
    std::sort(ids.begin(), ids.end());
    for (int client : ids) {
        if (client < 0 || client >= static_cast<int>(shards.size()))
            throw value_error("ingest_round: client id out of range");
        if (p.seen.count(client)) continue;
        std::vector<double> rep;
        try {
            rep = extract_representation(anchor, shards[static_cast<std::size_t>(client)]);
        } catch (const degenerate_shard_error& e) {
            throw degenerate_shard_error("client " + std::to_string(client) + ": " + e.what());
        }
        Cluster c;
        c.id = p.next_id++;
        c.members.push_back(client);
        c.rep_sum = rep;
        p.clusters.push_back(std::move(c));
        p.client_rep.emplace(client, std::move(rep));
        p.seen.insert(client);
    }
}

/// Pairwise cosine between cluster representation sums; unit diagonal.
inline std::vector<std::vector<double>> similarity_matrix(const ClusterPartition& p) {
    std::size_t k = p.clusters.size();
    std::vector<std::vector<double>> m(k, std::vector<double>(k, 1.0));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            m[i][j] = m[j][i] = cosine(p.clusters[i].rep_sum, p.clusters[j].rep_sum);
    return m;
}

/// Record of one absorb event; member counts are taken at merge time so
/// model averaging can weight the two sides faithfully.
struct MergeEvent {
    int kept_id = 0;
    int absorbed_id = 0;
    int kept_count_before = 0;
    int absorbed_count = 0;
};

/// Greedy agglomeration: repeatedly merge the most similar cluster pair
/// while that similarity strictly exceeds tau. The survivor is the lower
/// id, its sum absorbs the other side's, and only its similarities are
/// refreshed between merges. Ties break toward the earliest pair in id
/// order, which makes the outcome deterministic.
inline std::vector<MergeEvent> merge_step(ClusterPartition& p, double tau) {
    std::vector<MergeEvent> log;
    if (p.clusters.size() < 2) return log;

    std::size_t k = p.clusters.size();
    std::vector<std::vector<double>> sim(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            sim[i][j] = cosine(p.clusters[i].rep_sum, p.clusters[j].rep_sum);

    while (p.clusters.size() >= 2) {
        k = p.clusters.size();
        std::size_t bi = 0, bj = 1;
        double best = -2.0;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j)
                if (sim[i][j] > best) {
                    best = sim[i][j];
                    bi = i;
                    bj = j;
                }
        if (!(best > tau)) break;

        Cluster& keep = p.clusters[bi];
        Cluster& gone = p.clusters[bj];
        log.push_back({keep.id, gone.id, static_cast<int>(keep.members.size()),
                       static_cast<int>(gone.members.size())});
        keep.members.insert(keep.members.end(), gone.members.begin(), gone.members.end());
        for (std::size_t v = 0; v < keep.rep_sum.size(); ++v) keep.rep_sum[v] += gone.rep_sum[v];

        p.clusters.erase(p.clusters.begin() + static_cast<std::ptrdiff_t>(bj));
        sim.erase(sim.begin() + static_cast<std::ptrdiff_t>(bj));
        for (auto& row : sim) row.erase(row.begin() + static_cast<std::ptrdiff_t>(bj));
        for (std::size_t j = 0; j < p.clusters.size(); ++j) {
            if (j == bi) continue;
            sim[std::min(bi, j)][std::max(bi, j)] =
                cosine(p.clusters[bi].rep_sum, p.clusters[j].rep_sum);
        }
    }
    return log;
}

/// Sum of pairwise cosines between cluster representations. Merging a
/// similar pair removes its (large) term, so the greedy step descends this
/// quantity.
inline double clustering_objective(const ClusterPartition& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.clusters.size(); ++i)
        for (std::size_t j = i + 1; j < p.clusters.size(); ++j)
            total += cosine(p.clusters[i].rep_sum, p.clusters[j].rep_sum);
    return total;
}

/// Placement decision for a client arriving after training. Joining uses
/// a non-strict threshold (a similarity exactly at tau joins), unlike
/// merging, which requires strictly exceeding it. When no cluster is close
/// enough the caller opens a fresh cluster seeded from the nearest one's
/// model, which source_id identifies.
struct InferenceResult {
    int cluster_id = -1;
    bool created_new = false;
    int source_id = -1;
    double similarity = -2.0;
};

inline InferenceResult infer_cluster(const ClusterPartition& p, std::span<const double> rep,
                                     double tau) {
    if (p.clusters.empty()) throw value_error("infer_cluster: empty partition");
    InferenceResult r;
    for (const auto& c : p.clusters) {
        double s = cosine(rep, c.rep_sum);
        if (s > r.similarity) {
            r.similarity = s;
            r.source_id = c.id;
        }
    }
    if (r.similarity >= tau) {
        r.cluster_id = r.source_id;
        r.created_new = false;
    } else {
        r.cluster_id = p.next_id;
        r.created_new = true;
    }
    return r;
}

/// Client -> cluster id for clients 0..num_clients-1; unseen slots hold -1.
inline std::vector<int> assignment_vector(const ClusterPartition& p, int num_clients) {
    std::vector<int> out(static_cast<std::size_t>(num_clients), -1);
    for (const auto& c : p.clusters)
        for (int m : c.members)
            if (m >= 0 && m < num_clients) out[static_cast<std::size_t>(m)] = c.id;
    return out;
}

}  // namespace stocfl
