// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus BLEU-n, mean-over-pairs ROUGE-n / ROUGE-L F1, and Distinct-n.
// Smoothing: an order with zero clipped matches scores 1 / (total + 1).

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prompt_forge/numerics.hpp"
#include "prompt_forge/vocab.hpp"

namespace prompt_forge {

using NGram = std::vector<std::size_t>;

inline std::map<NGram, std::size_t> ngram_counts(const TokenSequence& s, std::size_t n) {
    std::map<NGram, std::size_t> out;
    if (n == 0 || s.size() < n) return out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[NGram(s.ids.begin() + i, s.ids.begin() + i + n)];
    return out;
}

namespace detail {

inline void check_corpus(const std::vector<TokenSequence>& hyps, const std::vector<TokenSequence>& refs,
                         std::size_t n, const char* who) {
    if (hyps.empty()) throw InvalidArgument(std::string(who) + ": empty corpus");
    if (hyps.size() != refs.size())
        throw InvalidArgument(std::string(who) + ": " + std::to_string(hyps.size()) + " hypotheses vs " +
                              std::to_string(refs.size()) + " references");
    if (n == 0) throw InvalidArgument(std::string(who) + ": n must be >= 1");
}

inline double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace detail

/// Corpus-level BLEU with orders 1..n, geometric mean, brevity penalty.
inline double bleu_n(const std::vector<TokenSequence>& hyps, const std::vector<TokenSequence>& refs, std::size_t n) {
    detail::check_corpus(hyps, refs, n, "bleu_n");
    std::size_t c = 0, r = 0;
    std::vector<std::size_t> clipped(n, 0), total(n, 0);
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        c += hyps[i].size();
        r += refs[i].size();
        for (std::size_t k = 1; k <= n; ++k) {
            const auto h = ngram_counts(hyps[i], k);
            const auto ref = ngram_counts(refs[i], k);
            for (const auto& [g, cnt] : h) {
                total[k - 1] += cnt;
                auto it = ref.find(g);
                if (it != ref.end()) clipped[k - 1] += std::min(cnt, it->second);
            }
        }
    }
    if (c == 0) return r == 0 ? 1.0 : 0.0;
    double log_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double p = clipped[k] > 0 ? static_cast<double>(clipped[k]) / static_cast<double>(total[k])
                                        : 1.0 / static_cast<double>(total[k] + 1);
        log_sum += std::log(p);
    }
    const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
    return std::clamp(bp * std::exp(log_sum / static_cast<double>(n)), 0.0, 1.0);
}

/// Mean over pairs of n-gram overlap F1. A pair where neither side has an
/// n-gram scores 1 when the sequences are equal and 0 otherwise.
inline double rouge_n(const std::vector<TokenSequence>& hyps, const std::vector<TokenSequence>& refs, std::size_t n) {
    detail::check_corpus(hyps, refs, n, "rouge_n");
    double sum = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto h = ngram_counts(hyps[i], n);
        const auto ref = ngram_counts(refs[i], n);
        std::size_t th = 0, tr = 0, overlap = 0;
        for (const auto& [g, cnt] : h) {
            th += cnt;
            auto it = ref.find(g);
            if (it != ref.end()) overlap += std::min(cnt, it->second);
        }
        for (const auto& kv : ref) tr += kv.second;
        if (th == 0 && tr == 0) {
            sum += hyps[i] == refs[i] ? 1.0 : 0.0;
            continue;
        }
        const double p = th ? static_cast<double>(overlap) / static_cast<double>(th) : 0.0;
        const double rc = tr ? static_cast<double>(overlap) / static_cast<double>(tr) : 0.0;
        sum += detail::f1(p, rc);
    }
    return sum / static_cast<double>(hyps.size());
}

inline std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a.ids[i - 1] == b.ids[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// Mean over pairs of LCS-based F1.
inline double rouge_l(const std::vector<TokenSequence>& hyps, const std::vector<TokenSequence>& refs) {
    detail::check_corpus(hyps, refs, 1, "rouge_l");
    double sum = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        if (hyps[i].empty() && refs[i].empty()) {
            sum += 1.0;
            continue;
        }
        const double l = static_cast<double>(lcs_length(hyps[i], refs[i]));
        const double p = hyps[i].empty() ? 0.0 : l / static_cast<double>(hyps[i].size());
        const double r = refs[i].empty() ? 0.0 : l / static_cast<double>(refs[i].size());
        sum += detail::f1(p, r);
    }
    return sum / static_cast<double>(hyps.size());
}

/// Unique n-grams over total n-grams across the whole corpus.
inline double distinct_n(const std::vector<TokenSequence>& hyps, std::size_t n) {
    if (n == 0) throw InvalidArgument("distinct_n: n must be >= 1");
    std::set<NGram> unique;
    std::size_t total = 0;
    for (const auto& h : hyps)
        for (const auto& [g, cnt] : ngram_counts(h, n)) {
            unique.insert(g);
            total += cnt;
        }
    if (total == 0) throw InvalidArgument("distinct_n: no " + std::to_string(n) + "-grams in corpus");
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

struct EvalReport {
    std::map<std::string, double> scores;
    std::size_t corpus_size = 0;
    std::size_t max_n = 2;

    double at(const std::string& k) const {
        auto it = scores.find(k);
        if (it == scores.end()) throw InvalidArgument("EvalReport: no metric '" + k + "'");
        return it->second;
    }
};

/// All four metric families: BLEU-1..n, ROUGE-1..n, ROUGE-L, Distinct-1..n.
/// Distinct-k is omitted when the hypotheses hold no k-grams.
inline EvalReport evaluate_corpus(const std::vector<TokenSequence>& hyps, const std::vector<TokenSequence>& refs,
                                  std::size_t max_n = 2) {
    EvalReport rep;
    rep.corpus_size = hyps.size();
    rep.max_n = max_n;
    for (std::size_t k = 1; k <= max_n; ++k) {
        rep.scores["bleu-" + std::to_string(k)] = bleu_n(hyps, refs, k);
        rep.scores["rouge-" + std::to_string(k)] = rouge_n(hyps, refs, k);
        try {
            rep.scores["distinct-" + std::to_string(k)] = distinct_n(hyps, k);
        } catch (const InvalidArgument&) {
        }
    }
    rep.scores["rouge-l"] = rouge_l(hyps, refs);
    return rep;
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
    j = {{"scores", r.scores}, {"corpus_size", r.corpus_size}, {"max_n", r.max_n}, {"smoothing", "add-one-on-zero"}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
    r.scores = j.at("scores").get<std::map<std::string, double>>();
    r.corpus_size = j.at("corpus_size").get<std::size_t>();
    r.max_n = j.at("max_n").get<std::size_t>();
}

}  // namespace prompt_forge
