#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "stocfl/error.hpp"
#include "stocfl/model.hpp"
#include "stocfl/rng.hpp"

namespace stocfl {

/// Pool of labeled samples a federated scenario is carved from.
struct BaseDataset {
    int feature_dim = 0;
    int num_classes = 0;
    std::vector<double> features;  // n x d row-major
    std::vector<int> labels;

    int size() const { return static_cast<int>(labels.size()); }
};

enum class ScenarioKind { pathological, rotated, shifted, hybrid, iid };

inline const char* to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::pathological: return "pathological";
        case ScenarioKind::rotated: return "rotated";
        case ScenarioKind::shifted: return "shifted";
        case ScenarioKind::hybrid: return "hybrid";
        case ScenarioKind::iid: return "iid";
    }
    return "?";
}

/// N clients with per-client train (and, after splitting, test) shards plus
/// the generating cluster id of each client. true_cluster is evaluation-only
/// ground truth; the clustering algorithm never sees it.
struct FederatedScenario {
    std::vector<DatasetShard> train_shards;
    std::vector<DatasetShard> test_shards;  // empty until train_test_split
    std::vector<int> true_cluster;
    int num_clusters = 0;
    int num_classes = 0;
    ScenarioKind kind = ScenarioKind::iid;

    int num_clients() const { return static_cast<int>(train_shards.size()); }
};

namespace detail {

inline void append_sample(DatasetShard& shard, const BaseDataset& base, int idx) {
    auto* src = base.features.data() + static_cast<std::size_t>(idx) * static_cast<std::size_t>(base.feature_dim);
    shard.features.insert(shard.features.end(), src, src + base.feature_dim);
    shard.labels.push_back(base.labels[static_cast<std::size_t>(idx)]);
}

// Deal `pool` (already shuffled) near-evenly into `count` shards.
inline std::vector<DatasetShard> deal(const BaseDataset& base, const std::vector<int>& pool,
                                      int count) {
    if (count < 1) throw value_error("client count must be >= 1");
    if (static_cast<int>(pool.size()) < count)
        throw value_error("not enough samples to give every client at least one");
    std::vector<DatasetShard> shards(static_cast<std::size_t>(count));
    int n = static_cast<int>(pool.size());
    int base_sz = n / count, rem = n % count;
    int at = 0;
    for (int c = 0; c < count; ++c) {
        int sz = base_sz + (c < rem ? 1 : 0);
        auto& shard = shards[static_cast<std::size_t>(c)];
        shard.feature_dim = base.feature_dim;
        shard.features.reserve(static_cast<std::size_t>(sz) * static_cast<std::size_t>(base.feature_dim));
        for (int i = 0; i < sz; ++i) append_sample(shard, base, pool[static_cast<std::size_t>(at++)]);
    }
    return shards;
}

}  // namespace detail

/// Synthetic classification pool: per-class Gaussian prototypes placed
/// uniformly on the sphere of radius class_separation, unit noise, labels
/// balanced within one sample.
inline BaseDataset make_base_dataset(std::uint64_t seed, int n, int d, int num_classes,
                                     double class_separation) {
    if (num_classes < 2) throw value_error("make_base_dataset: num_classes must be >= 2");
    if (n < num_classes) throw value_error("make_base_dataset: n must be >= num_classes");
    if (d < 2) throw value_error("make_base_dataset: d must be >= 2");
    if (!(class_separation > 0.0)) throw value_error("make_base_dataset: class_separation must be > 0");

    Rng rng(derive_seed(seed, 0xDA7Au));
    std::vector<std::vector<double>> prototypes(static_cast<std::size_t>(num_classes));
    for (auto& proto : prototypes) {
        proto.resize(static_cast<std::size_t>(d));
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& v : proto) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        for (double& v : proto) v *= class_separation / norm;
    }

    BaseDataset base;
    base.feature_dim = d;
    base.num_classes = num_classes;
    base.features.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
    base.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int y = i % num_classes;  // round-robin keeps counts within +-1
        base.labels[static_cast<std::size_t>(i)] = y;
        double* row = base.features.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
        const auto& proto = prototypes[static_cast<std::size_t>(y)];
        for (int j = 0; j < d; ++j) row[j] = proto[static_cast<std::size_t>(j)] + rng.normal();
    }
    return base;
}

/// Label-distribution skew: clients of group g hold only labels from
/// label_groups[g]; samples with uncovered labels are dropped.
inline FederatedScenario partition_pathological(const BaseDataset& base,
                                                const std::vector<std::vector<int>>& label_groups,
                                                int clients_per_group, std::uint64_t seed,
                                                ScenarioKind kind = ScenarioKind::pathological) {
    if (label_groups.empty()) throw value_error("partition_pathological: no label groups");
    std::vector<int> owner(static_cast<std::size_t>(base.num_classes), -1);
    for (std::size_t g = 0; g < label_groups.size(); ++g) {
        for (int lbl : label_groups[g]) {
            if (lbl < 0 || lbl >= base.num_classes)
                throw value_error("partition_pathological: label out of range");
            if (owner[static_cast<std::size_t>(lbl)] != -1)
                throw value_error("partition_pathological: label groups must be disjoint");
            owner[static_cast<std::size_t>(lbl)] = static_cast<int>(g);
        }
    }

    Rng rng(derive_seed(seed, 0x9A70u));
    FederatedScenario sc;
    sc.kind = kind;
    sc.num_classes = base.num_classes;
    sc.num_clusters = static_cast<int>(label_groups.size());
    for (std::size_t g = 0; g < label_groups.size(); ++g) {
        std::vector<int> pool;
        for (int i = 0; i < base.size(); ++i)
            if (owner[static_cast<std::size_t>(base.labels[static_cast<std::size_t>(i)])] == static_cast<int>(g))
                pool.push_back(i);
        if (pool.empty()) throw value_error("partition_pathological: group " + std::to_string(g) + " has no samples");
        rng.shuffle(pool);
        auto shards = detail::deal(base, pool, clients_per_group);
        for (auto& s : shards) {
            sc.train_shards.push_back(std::move(s));
            sc.true_cluster.push_back(static_cast<int>(g));
        }
    }
    return sc;
}

/// Single-cluster uniform split.
inline FederatedScenario partition_iid(const BaseDataset& base, int num_clients,
                                       std::uint64_t seed) {
    std::vector<std::vector<int>> all(1);
    for (int c = 0; c < base.num_classes; ++c) all[0].push_back(c);
    auto sc = partition_pathological(base, all, num_clients, seed, ScenarioKind::iid);
    return sc;
}

/// Random orthogonal d x d matrix (Householder QR of a Gaussian matrix,
/// sign-fixed so R has positive diagonal). Row-major.
inline std::vector<double> random_orthogonal(int d, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x0070u));
    std::size_t dd = static_cast<std::size_t>(d);
    std::vector<double> a(dd * dd);
    for (double& v : a) v = rng.normal();

    std::vector<std::vector<double>> reflectors;
    std::vector<double> diag_sign(dd, 1.0);
    for (int k = 0; k < d; ++k) {
        std::vector<double> v(dd - static_cast<std::size_t>(k));
        double norm = 0.0;
        for (int i = k; i < d; ++i) {
            v[static_cast<std::size_t>(i - k)] = a[static_cast<std::size_t>(i) * dd + static_cast<std::size_t>(k)];
            norm += v[static_cast<std::size_t>(i - k)] * v[static_cast<std::size_t>(i - k)];
        }
        norm = std::sqrt(norm);
        double alpha = v[0] >= 0.0 ? -norm : norm;
        diag_sign[static_cast<std::size_t>(k)] = alpha >= 0.0 ? 1.0 : -1.0;
        v[0] -= alpha;
        double vnorm = 0.0;
        for (double x : v) vnorm += x * x;
        vnorm = std::sqrt(vnorm);
        if (vnorm > 1e-300)
            for (double& x : v) x /= vnorm;
        // apply H = I - 2 v v^T to the trailing block
        for (int j = k; j < d; ++j) {
            double dot = 0.0;
            for (int i = k; i < d; ++i)
                dot += v[static_cast<std::size_t>(i - k)] * a[static_cast<std::size_t>(i) * dd + static_cast<std::size_t>(j)];
            for (int i = k; i < d; ++i)
                a[static_cast<std::size_t>(i) * dd + static_cast<std::size_t>(j)] -=
                    2.0 * dot * v[static_cast<std::size_t>(i - k)];
        }
        reflectors.push_back(std::move(v));
    }

    // accumulate Q = H_0 ... H_{d-1} I
    std::vector<double> q(dd * dd, 0.0);
    for (std::size_t i = 0; i < dd; ++i) q[i * dd + i] = 1.0;
    for (int k = d - 1; k >= 0; --k) {
        const auto& v = reflectors[static_cast<std::size_t>(k)];
        for (int j = 0; j < d; ++j) {
            double dot = 0.0;
            for (int i = k; i < d; ++i)
                dot += v[static_cast<std::size_t>(i - k)] * q[static_cast<std::size_t>(i) * dd + static_cast<std::size_t>(j)];
            for (int i = k; i < d; ++i)
                q[static_cast<std::size_t>(i) * dd + static_cast<std::size_t>(j)] -=
                    2.0 * dot * v[static_cast<std::size_t>(i - k)];
        }
    }
    // columns of Q scaled so the implied R has positive diagonal
    for (std::size_t i = 0; i < dd; ++i)
        for (std::size_t j = 0; j < dd; ++j) q[i * dd + j] *= diag_sign[j];
    return q;
}

/// Feature-distribution skew: cluster r applies a fixed orthogonal transform
/// to its clients' features (identity for r = 0). Labels untouched.
inline FederatedScenario partition_rotated(const BaseDataset& base, int num_rotations,
                                           int clients_per_rotation, std::uint64_t seed) {
    if (num_rotations < 2) throw value_error("partition_rotated: need >= 2 rotations");
    Rng rng(derive_seed(seed, 0x2070u));
    std::vector<int> pool(static_cast<std::size_t>(base.size()));
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(pool);
    auto shards = detail::deal(base, pool, num_rotations * clients_per_rotation);

    FederatedScenario sc;
    sc.kind = ScenarioKind::rotated;
    sc.num_classes = base.num_classes;
    sc.num_clusters = num_rotations;
    std::size_t d = static_cast<std::size_t>(base.feature_dim);
    std::vector<double> rotated(d);
    for (int r = 0; r < num_rotations; ++r) {
        std::vector<double> q;
        if (r > 0) q = random_orthogonal(base.feature_dim, derive_seed(seed, 0x2071u, static_cast<std::uint64_t>(r)));
        for (int c = 0; c < clients_per_rotation; ++c) {
            auto& shard = shards[static_cast<std::size_t>(r * clients_per_rotation + c)];
            if (r > 0) {
                for (int s = 0; s < shard.size(); ++s) {
                    double* row = shard.features.data() + static_cast<std::size_t>(s) * d;
                    for (std::size_t i = 0; i < d; ++i) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < d; ++j) acc += q[i * d + j] * row[j];
                        rotated[i] = acc;
                    }
                    std::copy(rotated.begin(), rotated.end(), row);
                }
            }
            sc.train_shards.push_back(std::move(shard));
            sc.true_cluster.push_back(r);
        }
    }
    return sc;
}

/// Label-concept skew: cluster s relabels y -> (y + shifts[s]) mod C.
/// Features are carried over bit-exactly.
inline FederatedScenario partition_shifted(const BaseDataset& base, const std::vector<int>& shifts,
                                           int clients_per_shift, std::uint64_t seed) {
    if (shifts.empty()) throw value_error("partition_shifted: shifts must be non-empty");
    Rng rng(derive_seed(seed, 0x5170u));
    std::vector<int> pool(static_cast<std::size_t>(base.size()));
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(pool);
    auto shards = detail::deal(base, pool, static_cast<int>(shifts.size()) * clients_per_shift);

    FederatedScenario sc;
    sc.kind = ScenarioKind::shifted;
    sc.num_classes = base.num_classes;
    sc.num_clusters = static_cast<int>(shifts.size());
    for (std::size_t s = 0; s < shifts.size(); ++s) {
        int shift = ((shifts[s] % base.num_classes) + base.num_classes) % base.num_classes;
        for (int c = 0; c < clients_per_shift; ++c) {
            auto& shard = shards[s * static_cast<std::size_t>(clients_per_shift) + static_cast<std::size_t>(c)];
            for (int& y : shard.labels) y = (y + shift) % base.num_classes;
            sc.train_shards.push_back(std::move(shard));
            sc.true_cluster.push_back(static_cast<int>(s));
        }
    }
    return sc;
}

/// Feature-concept skew: first half of the clients hold domain A, second
/// half domain B. K = 2 by construction.
inline FederatedScenario partition_hybrid(const BaseDataset& base_a, const BaseDataset& base_b,
                                          int clients_per_domain, std::uint64_t seed) {
    if (base_a.num_classes != base_b.num_classes)
        throw value_error("partition_hybrid: class counts differ");
    if (base_a.feature_dim != base_b.feature_dim)
        throw value_error("partition_hybrid: feature dims differ");
    Rng rng(derive_seed(seed, 0x4B1Du));

    FederatedScenario sc;
    sc.kind = ScenarioKind::hybrid;
    sc.num_classes = base_a.num_classes;
    sc.num_clusters = 2;
    for (int domain = 0; domain < 2; ++domain) {
        const BaseDataset& base = domain == 0 ? base_a : base_b;
        std::vector<int> pool(static_cast<std::size_t>(base.size()));
        std::iota(pool.begin(), pool.end(), 0);
        rng.shuffle(pool);
        auto shards = detail::deal(base, pool, clients_per_domain);
        for (auto& s : shards) {
            sc.train_shards.push_back(std::move(s));
            sc.true_cluster.push_back(domain);
        }
    }
    return sc;
}

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw idx_error(idx_fault::truncated, path + ": truncated header");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace detail

/// Big-endian IDX image/label pair (the MNIST container format). Pixels are
/// scaled to [0, 1].
inline BaseDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw idx_error(idx_fault::truncated, images_path + ": cannot open");
    if (detail::read_be32(img, images_path) != 0x00000803u)
        throw idx_error(idx_fault::bad_magic, images_path + ": bad magic (want 0x00000803)");
    std::uint32_t count = detail::read_be32(img, images_path);
    std::uint32_t rows = detail::read_be32(img, images_path);
    std::uint32_t cols = detail::read_be32(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw idx_error(idx_fault::truncated, labels_path + ": cannot open");
    if (detail::read_be32(lab, labels_path) != 0x00000801u)
        throw idx_error(idx_fault::bad_magic, labels_path + ": bad magic (want 0x00000801)");
    std::uint32_t lab_count = detail::read_be32(lab, labels_path);
    if (count != lab_count)
        throw idx_error(idx_fault::count_mismatch,
                        images_path + ": " + std::to_string(count) + " images vs " +
                            std::to_string(lab_count) + " labels");

    std::size_t pixels = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    std::vector<unsigned char> buf(pixels);
    BaseDataset base;
    base.feature_dim = static_cast<int>(pixels);
    base.features.resize(static_cast<std::size_t>(count) * pixels);
    base.labels.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels)))
            throw idx_error(idx_fault::truncated, images_path + ": truncated pixel data");
        double* row = base.features.data() + static_cast<std::size_t>(i) * pixels;
        for (std::size_t p = 0; p < pixels; ++p) row[p] = static_cast<double>(buf[p]) / 255.0;
        unsigned char y;
        if (!lab.read(reinterpret_cast<char*>(&y), 1))
            throw idx_error(idx_fault::truncated, labels_path + ": truncated label data");
        base.labels[i] = static_cast<int>(y);
    }
    int max_label = 0;
    for (int y : base.labels) max_label = std::max(max_label, y);
    base.num_classes = std::max(max_label + 1, 2);
    return base;
}

/// Seeded per-shard split; test gets round(n * fraction) samples, train the
/// rest (which must stay non-empty).
inline std::pair<DatasetShard, DatasetShard> train_test_split(const DatasetShard& shard,
                                                              double test_fraction,
                                                              std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw value_error("train_test_split: fraction must be in (0, 1)");
    int n = shard.size();
    int n_test = static_cast<int>(std::lround(static_cast<double>(n) * test_fraction));
    if (n - n_test < 1) throw value_error("train_test_split: client too small for split");

    Rng rng(derive_seed(seed, 0x5B11u));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);

    DatasetShard test, train;
    test.feature_dim = train.feature_dim = shard.feature_dim;
    auto copy_row = [&](DatasetShard& dst, int i) {
        auto r = shard.row(i);
        dst.features.insert(dst.features.end(), r.begin(), r.end());
        dst.labels.push_back(shard.labels[static_cast<std::size_t>(i)]);
    };
    for (int i = 0; i < n_test; ++i) copy_row(test, idx[static_cast<std::size_t>(i)]);
    for (int i = n_test; i < n; ++i) copy_row(train, idx[static_cast<std::size_t>(i)]);
    return {train, test};
}

/// Scenario-wide split: each client keeps its own distribution in both
/// halves.
inline FederatedScenario train_test_split(const FederatedScenario& sc, double test_fraction,
                                          std::uint64_t seed) {
    FederatedScenario out;
    out.true_cluster = sc.true_cluster;
    out.num_clusters = sc.num_clusters;
    out.num_classes = sc.num_classes;
    out.kind = sc.kind;
    out.train_shards.reserve(sc.train_shards.size());
    out.test_shards.reserve(sc.train_shards.size());
    for (std::size_t c = 0; c < sc.train_shards.size(); ++c) {
        auto [train, test] = train_test_split(sc.train_shards[c], test_fraction,
                                              derive_seed(seed, 0x5B17u, static_cast<std::uint64_t>(c)));
        out.train_shards.push_back(std::move(train));
        out.test_shards.push_back(std::move(test));
    }
    return out;
}

/// Scenario restricted to the chosen client indices (held-out protocols).
inline FederatedScenario subset_scenario(const FederatedScenario& sc,
                                         const std::vector<int>& clients) {
    FederatedScenario out;
    out.num_classes = sc.num_classes;
    out.kind = sc.kind;
    std::vector<int> seen_clusters;
    for (int c : clients) {
        if (c < 0 || c >= sc.num_clients()) throw value_error("subset_scenario: client index out of range");
        out.train_shards.push_back(sc.train_shards[static_cast<std::size_t>(c)]);
        if (!sc.test_shards.empty()) out.test_shards.push_back(sc.test_shards[static_cast<std::size_t>(c)]);
        out.true_cluster.push_back(sc.true_cluster[static_cast<std::size_t>(c)]);
        seen_clusters.push_back(sc.true_cluster[static_cast<std::size_t>(c)]);
    }
    std::sort(seen_clusters.begin(), seen_clusters.end());
    seen_clusters.erase(std::unique(seen_clusters.begin(), seen_clusters.end()), seen_clusters.end());
    out.num_clusters = static_cast<int>(seen_clusters.size());
    return out;
}

}  // namespace stocfl
