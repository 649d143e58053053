// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Position-agnostic prompt similarity, spectral min-max-cut clustering and
// the similarity heatmap export.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prompt_forge/numerics.hpp"
#include "prompt_forge/prompt.hpp"

namespace prompt_forge {

/// w = 1 / (1 + mean Euclidean distance over all l*l row pairs).
/// Row order of either argument does not matter.
inline double prompt_similarity(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b) || a.rows == 0)
        throw InvalidArgument("prompt_similarity: shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
    // Summing in sorted order makes the result bitwise independent of
    // argument and row order.
    std::vector<double> dist;
    dist.reserve(a.rows * b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) dist.push_back(euclidean_distance(a.row(i), b.row(j)));
    std::sort(dist.begin(), dist.end());
    double sum = 0.0;
    for (double d : dist) sum += d;
    const double n = static_cast<double>(dist.size());
    return 1.0 / (1.0 + sum / n);
}

inline double prompt_similarity(const SoftPrompt& a, const SoftPrompt& b) { return prompt_similarity(a.values, b.values); }

struct SimilarityMatrix {
    std::vector<std::string> task_ids;
    Matrix w;

    std::size_t size() const { return w.rows; }
};

inline SimilarityMatrix build_similarity(const PromptPool& pool) {
    if (pool.size() < 2) throw InvalidArgument("build_similarity: pool needs at least 2 prompts");
    pool.validate();
    SimilarityMatrix s;
    const std::size_t t = pool.size();
    s.w = Matrix(t, t);
    for (std::size_t i = 0; i < t; ++i) {
        s.task_ids.push_back(pool.prompts[i].task_id);
        s.w(i, i) = 1.0;
        for (std::size_t j = i + 1; j < t; ++j) s.w(i, j) = s.w(j, i) = prompt_similarity(pool.prompts[i], pool.prompts[j]);
    }
    return s;
}

struct ClusterAssignment {
    std::size_t m = 0;
    std::vector<std::size_t> labels;
    double objective = 0.0;           // min-max-cut score of `labels`
    std::vector<double> eigenvalues;  // smallest m+1 Laplacian eigenvalues (eigengap report)

    friend bool operator==(const ClusterAssignment&, const ClusterAssignment&) = default;
};

/// Sum over clusters of cut(C, not C) / within(C); `within` includes the diagonal.
inline double min_max_cut_objective(const Matrix& w, const std::vector<std::size_t>& labels, std::size_t m) {
    if (labels.size() != w.rows) throw InvalidArgument("min_max_cut_objective: label count mismatch");
    std::vector<double> cut(m, 0.0), within(m, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
        if (labels[i] >= m) throw InvalidArgument("min_max_cut_objective: label out of range");
        for (std::size_t j = 0; j < w.cols; ++j) (labels[i] == labels[j] ? within : cut)[labels[i]] += w(i, j);
    }
    double obj = 0.0;
    for (std::size_t z = 0; z < m; ++z) {
        if (within[z] <= 0.0) return std::numeric_limits<double>::infinity();
        obj += cut[z] / within[z];
    }
    return obj;
}

/// Renumbers labels by order of first appearance.
inline std::vector<std::size_t> canonical_labels(const std::vector<std::size_t>& labels) {
    std::vector<std::size_t> map(labels.size() + 1, std::numeric_limits<std::size_t>::max());
    std::vector<std::size_t> out(labels.size());
    std::size_t next = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= map.size()) map.resize(labels[i] + 1, std::numeric_limits<std::size_t>::max());
        if (map[labels[i]] == std::numeric_limits<std::size_t>::max()) map[labels[i]] = next++;
        out[i] = map[labels[i]];
    }
    return out;
}

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

struct KMeansResult {
    std::vector<std::size_t> labels;
    double inertia = 0.0;
};

/// One k-means++ / Lloyd run over the points visited in `order`.
inline KMeansResult kmeans_once(const Matrix& pts, std::size_t k, const std::vector<std::size_t>& order, SeededRng& rng) {
    const std::size_t n = pts.rows;
    const std::size_t dim = pts.cols;
    Matrix centers(k, dim);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    auto set_center = [&](std::size_t c, std::size_t p) {
        for (std::size_t j = 0; j < dim; ++j) centers(c, j) = pts(p, j);
    };
    set_center(0, order[rng.below(n)]);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i : order) {
            d2[i] = std::min(d2[i], sq_dist(pts.row(i), centers.row(c - 1)));
            total += d2[i];
        }
        std::size_t pick = order.back();
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (std::size_t i : order) {
                if (d2[i] <= 0.0) continue;
                pick = i;
                if ((u -= d2[i]) < 0.0) break;
            }
        } else {
            pick = order[rng.below(n)];
        }
        set_center(c, pick);
    }
    std::vector<std::size_t> labels(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = iter == 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_dist(pts.row(i), centers.row(c));
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (labels[i] != best) changed = true;
            labels[i] = best;
        }
        // Empty clusters take the point farthest from its own center.
        for (std::size_t c = 0; c < k; ++c) {
            if (std::count(labels.begin(), labels.end(), c) > 0) continue;
            std::size_t far = order[0];
            double fd = -1.0;
            for (std::size_t i : order) {
                if (std::count(labels.begin(), labels.end(), labels[i]) <= 1) continue;
                const double d = sq_dist(pts.row(i), centers.row(labels[i]));
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            labels[far] = c;
            set_center(c, far);
            changed = true;
        }
        if (!changed) break;
        Matrix sum(k, dim);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++cnt[labels[i]];
            for (std::size_t j = 0; j < dim; ++j) sum(labels[i], j) += pts(i, j);
        }
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t j = 0; j < dim; ++j) centers(c, j) = sum(c, j) / static_cast<double>(cnt[c]);
    }
    KMeansResult r{labels, 0.0};
    for (std::size_t i = 0; i < n; ++i) r.inertia += sq_dist(pts.row(i), centers.row(labels[i]));
    return r;
}

/// Visiting order keyed on a hash of each node's sorted similarity row, so
/// relabeling the nodes does not change which points k-means++ draws.
inline std::vector<std::size_t> canonical_order(const Matrix& w) {
    std::vector<std::pair<std::uint64_t, std::size_t>> keys;
    for (std::size_t i = 0; i < w.rows; ++i) {
        std::vector<double> row(w.row(i).begin(), w.row(i).end());
        std::sort(row.begin(), row.end());
        Fnv1a h;
        h.values(row);
        keys.emplace_back(h.digest(), i);
    }
    std::sort(keys.begin(), keys.end());
    std::vector<std::size_t> order;
    for (const auto& k : keys) order.push_back(k.second);
    return order;
}

}  // namespace detail

/// Normalized-Laplacian spectral embedding + seeded k-means (20 restarts).
inline ClusterAssignment spectral_cluster(const Matrix& w, std::size_t m, std::uint64_t seed) {
    const std::size_t t = w.rows;
    if (w.rows != w.cols || t == 0) throw InvalidArgument("spectral_cluster: similarity matrix must be square");
    if (m == 0 || m > t)
        throw InvalidArgument("spectral_cluster: m=" + std::to_string(m) + " must lie in [1, " + std::to_string(t) + "]");
    if (!w.all_finite()) throw NumericError("spectral_cluster: non-finite similarity");
    ClusterAssignment out;
    out.m = m;
    std::vector<double> inv_sqrt_deg(t);
    for (std::size_t i = 0; i < t; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < t; ++j) deg += w(i, j);
        if (deg <= 0.0) throw NumericError("spectral_cluster: node " + std::to_string(i) + " has zero degree");
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }
    Matrix lap(t, t);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j)
            lap(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt_deg[i] * w(i, j) * inv_sqrt_deg[j];
    const auto eig = sym_eigen(lap, std::min(t, m + 1));
    out.eigenvalues = eig.values;
    if (m == 1) {
        out.labels.assign(t, 0);
        out.objective = min_max_cut_objective(w, out.labels, 1);
        return out;
    }
    Matrix emb(t, m);
    for (std::size_t i = 0; i < t; ++i) {
        double norm = 0.0;
        for (std::size_t c = 0; c < m; ++c) norm += eig.vectors(i, c) * eig.vectors(i, c);
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < m; ++c) emb(i, c) = norm > 0.0 ? eig.vectors(i, c) / norm : 0.0;
    }
    const auto order = detail::canonical_order(w);
    detail::KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::uint64_t r = 0; r < 20; ++r) {
        SeededRng rng(derive_seed(seed, r));
        auto res = detail::kmeans_once(emb, m, order, rng);
        if (res.inertia < best.inertia - 1e-12) best = std::move(res);
    }
    out.labels = canonical_labels(best.labels);
    out.objective = min_max_cut_objective(w, out.labels, m);
    return out;
}

/// Node order for display: by cluster, then task_id.
inline std::vector<std::size_t> cluster_order(const std::vector<std::string>& task_ids, const ClusterAssignment& a) {
    if (a.labels.size() != task_ids.size()) throw InvalidArgument("cluster_order: label count mismatch");
    std::vector<std::size_t> idx(task_ids.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
        if (a.labels[x] != a.labels[y]) return a.labels[x] < a.labels[y];
        return task_ids[x] < task_ids[y];
    });
    return idx;
}

inline void export_heatmap(const SimilarityMatrix& s, const ClusterAssignment& a, const std::filesystem::path& path) {
    const auto idx = cluster_order(s.task_ids, a);
    std::ofstream out(path);
    if (!out) throw FileError("cannot write " + path.string());
    out << "task_id";
    for (std::size_t j : idx) out << ',' << s.task_ids[j];
    out << '\n' << std::fixed << std::setprecision(6);
    for (std::size_t i : idx) {
        out << s.task_ids[i];
        for (std::size_t j : idx) out << ',' << s.w(i, j);
        out << '\n';
    }
    if (!out) throw FileError("write failed for " + path.string());
}

inline SimilarityMatrix load_heatmap(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot read " + path.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        return cells;
    };
    std::string line;
    if (!std::getline(in, line)) throw FormatError("heatmap " + path.string() + ": empty file");
    auto header = split(line);
    if (header.empty() || header[0] != "task_id") throw FormatError("heatmap " + path.string() + ": bad header");
    SimilarityMatrix s;
    s.task_ids.assign(header.begin() + 1, header.end());
    const std::size_t t = s.task_ids.size();
    s.w = Matrix(t, t);
    for (std::size_t i = 0; i < t; ++i) {
        if (!std::getline(in, line)) throw FormatError("heatmap " + path.string() + ": missing row " + std::to_string(i + 1));
        const auto cells = split(line);
        if (cells.size() != t + 1 || cells[0] != s.task_ids[i])
            throw FormatError("heatmap " + path.string() + ": malformed row " + std::to_string(i + 1));
        for (std::size_t j = 0; j < t; ++j) {
            try {
                s.w(i, j) = std::stod(cells[j + 1]);
            } catch (const std::exception&) {
                throw FormatError("heatmap " + path.string() + ": bad number in row " + std::to_string(i + 1));
            }
        }
    }
    return s;
}

inline void to_json(nlohmann::json& j, const ClusterAssignment& a) {
    j = {{"m", a.m}, {"labels", a.labels}, {"objective", a.objective}, {"eigenvalues", a.eigenvalues}};
}

inline void from_json(const nlohmann::json& j, ClusterAssignment& a) {
    a.m = j.at("m").get<std::size_t>();
    a.labels = j.at("labels").get<std::vector<std::size_t>>();
    a.objective = j.at("objective").get<double>();
    a.eigenvalues = j.value("eigenvalues", std::vector<double>{});
    for (std::size_t l : a.labels)
        if (l >= a.m) throw FormatError("cluster assignment: label " + std::to_string(l) + " out of range");
}

}  // namespace prompt_forge
