// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Miniature pre-LN encoder-decoder used as the frozen generator, plus an
// independent encoder used only to produce instance queries. A soft prompt
// enters as l extra encoder rows stacked above the embedded input.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prompt_forge/autograd.hpp"
#include "prompt_forge/numerics.hpp"
#include "prompt_forge/vocab.hpp"

namespace prompt_forge {

struct BackboneConfig {
    std::size_t vocab_size = Vocab::kSize;
    std::size_t embed_dim = 32;
    std::size_t layers = 2;  // encoder layers == decoder layers
    std::size_t heads = 4;
    std::size_t ffn_dim = 64;
    std::size_t max_len = 64;
    std::uint64_t seed = 1;
    std::size_t instance_layers = 2;
    std::uint64_t instance_seed = 2;
    bool positional = true;

    void validate() const {
        if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
            throw InvalidArgument("BackboneConfig: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                                  std::to_string(heads));
        if (vocab_size <= Vocab::kMask) throw InvalidArgument("BackboneConfig: vocab must include the 4 specials");
        if (layers == 0 || instance_layers == 0 || ffn_dim == 0 || max_len == 0)
            throw InvalidArgument("BackboneConfig: zero-sized dimension");
    }

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

inline void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},       {"layers", c.layers},
         {"heads", c.heads},           {"ffn_dim", c.ffn_dim},           {"max_len", c.max_len},
         {"seed", c.seed},             {"instance_layers", c.instance_layers}, {"instance_seed", c.instance_seed},
         {"positional", c.positional}};
}

inline void from_json(const nlohmann::json& j, BackboneConfig& c) {
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.instance_layers = j.at("instance_layers").get<std::size_t>();
    c.instance_seed = j.at("instance_seed").get<std::uint64_t>();
    c.positional = j.at("positional").get<bool>();
}

/// Named weight matrices; std::map keeps iteration (and hashing) order fixed.
using WeightSet = std::map<std::string, Matrix>;

inline std::uint64_t hash_weights(const WeightSet& w) {
    Fnv1a h;
    for (const auto& [name, m] : w) {
        h.str(name);
        h.u64(m.rows);
        h.u64(m.cols);
        h.values(m.data);
    }
    return h.digest();
}

inline std::size_t count_params(const WeightSet& w) {
    std::size_t n = 0;
    for (const auto& kv : w) n += kv.second.size();
    return n;
}

/// Fixed sinusoidal position table: PE(p, 2i) = sin(p / 10000^(2i/e)), PE(p, 2i+1) = cos(...).
inline Matrix sinusoidal_positions(std::size_t n, std::size_t e) {
    Matrix pe(n, e);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t i = 0; i < e; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(e));
            pe(p, i) = std::sin(static_cast<double>(p) * freq);
            if (i + 1 < e) pe(p, i + 1) = std::cos(static_cast<double>(p) * freq);
        }
    }
    return pe;
}

namespace detail {

inline Matrix normal_matrix(SeededRng& rng, std::size_t r, std::size_t c, double stddev) {
    Matrix m(r, c);
    for (double& x : m.data) x = rng.normal() * stddev;
    return m;
}

inline void init_attention(WeightSet& w, const std::string& p, SeededRng& rng, std::size_t e) {
    const double s = 1.0 / std::sqrt(static_cast<double>(e));
    for (const char* n : {"wq", "wk", "wv", "wo"}) w[p + n] = normal_matrix(rng, e, e, s);
    for (const char* n : {"bq", "bk", "bv", "bo"}) w[p + n] = Matrix(1, e);
}

inline void init_ln(WeightSet& w, const std::string& p, std::size_t e) {
    w[p + "g"] = Matrix(1, e, 1.0);
    w[p + "b"] = Matrix(1, e);
}

inline void init_ffn(WeightSet& w, const std::string& p, SeededRng& rng, std::size_t e, std::size_t f) {
    w[p + "w1"] = normal_matrix(rng, e, f, 1.0 / std::sqrt(static_cast<double>(e)));
    w[p + "b1"] = Matrix(1, f);
    w[p + "w2"] = normal_matrix(rng, f, e, 1.0 / std::sqrt(static_cast<double>(f)));
    w[p + "b2"] = Matrix(1, e);
}

inline void init_encoder_stack(WeightSet& w, const std::string& p, SeededRng& rng, std::size_t layers,
                               std::size_t e, std::size_t f) {
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string l = p + std::to_string(i) + ".";
        init_ln(w, l + "ln1.", e);
        init_attention(w, l + "attn.", rng, e);
        init_ln(w, l + "ln2.", e);
        init_ffn(w, l + "ffn.", rng, e, f);
    }
    init_ln(w, p + "ln_f.", e);
}

}  // namespace detail

/// Weights bound as tape leaves for one forward/backward pass.
class BoundWeights {
public:
    BoundWeights(ad::Tape& tape, const WeightSet& w, bool trainable) {
        for (const auto& [name, m] : w) vars_.emplace(name, trainable ? tape.leaf(m, true) : tape.constant(m));
    }
    ad::Var operator[](const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw InvalidArgument("missing weight '" + name + "'");
        return it->second;
    }
    const std::map<std::string, ad::Var>& all() const { return vars_; }

private:
    std::map<std::string, ad::Var> vars_;
};

namespace nn {

inline ad::Var linear(ad::Tape& t, const BoundWeights& w, ad::Var x, const std::string& wn, const std::string& bn) {
    return t.add_row(t.matmul(x, w[wn]), w[bn]);
}

inline ad::Var layer_norm(ad::Tape& t, const BoundWeights& w, ad::Var x, const std::string& p) {
    return t.layer_norm(x, w[p + "g"], w[p + "b"]);
}

/// Multi-head scaled dot-product attention on already-projected q, k, v.
inline ad::Var attend(ad::Tape& t, ad::Var q, ad::Var k, ad::Var v, std::size_t heads, bool causal) {
    const std::size_t e = t.value(q).cols;
    const std::size_t dh = e / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        const auto kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        const auto vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        const auto a = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), inv), causal);
        outs.push_back(t.matmul(a, vh));
    }
    return heads == 1 ? outs[0] : t.concat_cols(outs);
}

inline ad::Var self_attention(ad::Tape& t, const BoundWeights& w, ad::Var x, const std::string& p,
                              std::size_t heads, bool causal) {
    const auto q = linear(t, w, x, p + "wq", p + "bq");
    const auto k = linear(t, w, x, p + "wk", p + "bk");
    const auto v = linear(t, w, x, p + "wv", p + "bv");
    return linear(t, w, attend(t, q, k, v, heads, causal), p + "wo", p + "bo");
}

inline ad::Var ffn(ad::Tape& t, const BoundWeights& w, ad::Var x, const std::string& p) {
    return linear(t, w, t.gelu(linear(t, w, x, p + "w1", p + "b1")), p + "w2", p + "b2");
}

inline ad::Var encoder_stack(ad::Tape& t, const BoundWeights& w, ad::Var x, const std::string& p,
                             std::size_t layers, std::size_t heads) {
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string l = p + std::to_string(i) + ".";
        x = t.add(x, self_attention(t, w, layer_norm(t, w, x, l + "ln1."), l + "attn.", heads, false));
        x = t.add(x, ffn(t, w, layer_norm(t, w, x, l + "ln2."), l + "ffn."));
    }
    return layer_norm(t, w, x, p + "ln_f.");
}

}  // namespace nn

/// Which parameter groups receive gradients in loss_and_grads.
struct Trainable {
    bool prompt = false;
    bool backbone = false;
};

struct LossAndGrads {
    double nll = 0.0;
    std::optional<Matrix> prompt_grad;
    WeightSet weight_grads;
};

struct DecodeOptions {
    std::size_t beam = 5;
    std::size_t no_repeat_ngram = 3;
    std::size_t max_out = 32;
};

class BackboneModel {
public:
    BackboneModel() = default;

    /// Seeded initialization of both the generator and the instance encoder.
    explicit BackboneModel(const BackboneConfig& cfg) : config_(cfg) {
        cfg.validate();
        const std::size_t e = cfg.embed_dim;
        const std::size_t f = cfg.ffn_dim;
        const std::size_t v = cfg.vocab_size;
        {
            SeededRng rng(cfg.seed);
            generator_["gen.tok_emb"] = detail::normal_matrix(rng, v, e, 1.0);
            detail::init_encoder_stack(generator_, "gen.enc.", rng, cfg.layers, e, f);
            for (std::size_t i = 0; i < cfg.layers; ++i) {
                const std::string l = "gen.dec." + std::to_string(i) + ".";
                detail::init_ln(generator_, l + "ln1.", e);
                detail::init_attention(generator_, l + "self.", rng, e);
                detail::init_ln(generator_, l + "ln2.", e);
                detail::init_attention(generator_, l + "cross.", rng, e);
                detail::init_ln(generator_, l + "ln3.", e);
                detail::init_ffn(generator_, l + "ffn.", rng, e, f);
            }
            detail::init_ln(generator_, "gen.dec.ln_f.", e);
            generator_["gen.out.w"] = detail::normal_matrix(rng, e, v, 0.02);
            generator_["gen.out.b"] = Matrix(1, v);
        }
        {
            SeededRng rng(cfg.instance_seed);
            instance_["ins.tok_emb"] = detail::normal_matrix(rng, v, e, 1.0);
            detail::init_encoder_stack(instance_, "ins.enc.", rng, cfg.instance_layers, e, f);
        }
        positions_ = sinusoidal_positions(cfg.max_len + 1, e);
    }

    BackboneModel(const BackboneConfig& cfg, WeightSet generator, WeightSet instance, bool frozen)
        : config_(cfg), generator_(std::move(generator)), instance_(std::move(instance)), frozen_(frozen) {
        cfg.validate();
        positions_ = sinusoidal_positions(cfg.max_len + 1, cfg.embed_dim);
        const BackboneModel ref(cfg);
        check_shapes(ref.generator_, generator_);
        check_shapes(ref.instance_, instance_);
    }

    const BackboneConfig& config() const { return config_; }
    const WeightSet& generator_weights() const { return generator_; }
    const WeightSet& instance_weights() const { return instance_; }
    WeightSet& mutable_generator_weights() { return generator_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }
    void unfreeze() { frozen_ = false; }

    std::uint64_t generator_hash() const { return hash_weights(generator_); }
    std::uint64_t instance_hash() const { return hash_weights(instance_); }
    std::size_t generator_param_count() const { return count_params(generator_); }

    void validate_sequence(const TokenSequence& s, const char* what) const {
        if (s.empty()) throw InvalidArgument(std::string(what) + ": empty token sequence");
        if (s.size() > config_.max_len)
            throw InvalidArgument(std::string(what) + ": length " + std::to_string(s.size()) + " exceeds max_len " +
                                  std::to_string(config_.max_len));
        for (std::size_t id : s.ids)
            if (id >= config_.vocab_size)
                throw InvalidArgument(std::string(what) + ": token id " + std::to_string(id) + " out of vocabulary");
    }

    /// Token embedding plus position encoding, one row per token.
    Matrix embed(const TokenSequence& x) const {
        validate_sequence(x, "embed");
        ad::Tape t;
        BoundWeights w(t, generator_, false);
        return t.value(embed_tokens(t, w, "gen.tok_emb", x.ids));
    }

    // ------------------------------------------------------------ tape API

    ad::Var embed_tokens(ad::Tape& t, const BoundWeights& w, const std::string& table,
                         const std::vector<std::size_t>& ids) const {
        const auto tok = t.gather_rows(w[table], ids);
        if (!config_.positional) return tok;
        Matrix pe(ids.size(), config_.embed_dim);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < config_.embed_dim; ++j) pe(i, j) = positions_(i, j);
        return t.add(tok, t.constant(std::move(pe)));
    }

    /// Encoder output over [prompt; embed(x)]. `prompt` may be invalid (no prompt rows).
    ad::Var encode(ad::Tape& t, const BoundWeights& w, ad::Var prompt, const TokenSequence& x) const {
        ad::Var input = embed_tokens(t, w, "gen.tok_emb", x.ids);
        if (prompt.valid()) {
            if (t.value(prompt).cols != config_.embed_dim)
                throw InvalidArgument("prompt width " + std::to_string(t.value(prompt).cols) + " != embed_dim " +
                                      std::to_string(config_.embed_dim));
            input = t.concat_rows(prompt, input);
        }
        return nn::encoder_stack(t, w, input, "gen.enc.", config_.layers, config_.heads);
    }

    struct CrossCache {
        std::vector<std::pair<ad::Var, ad::Var>> kv;  // per decoder layer
    };

    CrossCache cross_cache(ad::Tape& t, const BoundWeights& w, ad::Var memory) const {
        CrossCache c;
        for (std::size_t i = 0; i < config_.layers; ++i) {
            const std::string p = "gen.dec." + std::to_string(i) + ".cross.";
            c.kv.emplace_back(nn::linear(t, w, memory, p + "wk", p + "bk"), nn::linear(t, w, memory, p + "wv", p + "bv"));
        }
        return c;
    }

    /// Logits (len(dec_in) x vocab) for a teacher-forced decoder input.
    ad::Var decode(ad::Tape& t, const BoundWeights& w, const CrossCache& cache,
                   const std::vector<std::size_t>& dec_in) const {
        ad::Var h = embed_tokens(t, w, "gen.tok_emb", dec_in);
        for (std::size_t i = 0; i < config_.layers; ++i) {
            const std::string l = "gen.dec." + std::to_string(i) + ".";
            h = t.add(h, nn::self_attention(t, w, nn::layer_norm(t, w, h, l + "ln1."), l + "self.", config_.heads, true));
            const auto q = nn::linear(t, w, nn::layer_norm(t, w, h, l + "ln2."), l + "cross.wq", l + "cross.bq");
            const auto a = nn::attend(t, q, cache.kv[i].first, cache.kv[i].second, config_.heads, false);
            h = t.add(h, nn::linear(t, w, a, l + "cross.wo", l + "cross.bo"));
            h = t.add(h, nn::ffn(t, w, nn::layer_norm(t, w, h, l + "ln3."), l + "ffn."));
        }
        h = nn::layer_norm(t, w, h, "gen.dec.ln_f.");
        return nn::linear(t, w, h, "gen.out.w", "gen.out.b");
    }

    /// Summed token NLL of y given [prompt; x] on an existing tape.
    ad::Var nll_on_tape(ad::Tape& t, const BoundWeights& w, ad::Var prompt, const TokenSequence& x,
                        const TokenSequence& y) const {
        validate_sequence(x, "x");
        if (y.size() + 1 > config_.max_len) throw InvalidArgument("y: length exceeds max_len - 1");
        const auto memory = encode(t, w, prompt, x);
        const auto cache = cross_cache(t, w, memory);
        std::vector<std::size_t> dec_in{Vocab::kBos};
        dec_in.insert(dec_in.end(), y.ids.begin(), y.ids.end());
        std::vector<std::size_t> targets = y.ids;
        targets.push_back(Vocab::kEos);
        for (std::size_t id : targets)
            if (id >= config_.vocab_size) throw InvalidArgument("y: token id out of vocabulary");
        return t.cross_entropy_sum(decode(t, w, cache, dec_in), std::move(targets));
    }

    // ------------------------------------------------------------ value API

    LossAndGrads loss_and_grads(const Matrix* prompt, const TokenSequence& x, const TokenSequence& y,
                                Trainable trainable) const {
        if (prompt && prompt->cols != config_.embed_dim)
            throw InvalidArgument("loss_and_grads: prompt width " + std::to_string(prompt->cols) + " != embed_dim " +
                                  std::to_string(config_.embed_dim));
        ad::Tape t;
        BoundWeights w(t, generator_, trainable.backbone);
        ad::Var p;
        if (prompt) p = t.leaf(*prompt, trainable.prompt);
        const auto loss = nll_on_tape(t, w, p, x, y);
        LossAndGrads out;
        out.nll = t.value(loss)(0, 0);
        if (!std::isfinite(out.nll)) throw NumericError("loss_and_grads: non-finite nll");
        if (!trainable.prompt && !trainable.backbone) return out;
        t.backward(loss);
        if (prompt && trainable.prompt) out.prompt_grad = t.grad(p);
        if (trainable.backbone)
            for (const auto& [name, v] : w.all()) out.weight_grads.emplace(name, t.grad(v));
        return out;
    }

    double nll(const Matrix* prompt, const TokenSequence& x, const TokenSequence& y) const {
        return loss_and_grads(prompt, x, y, {}).nll;
    }

    /// Beam search with an n-gram repetition ban. Ties prefer lower token ids.
    TokenSequence generate(const Matrix* prompt, const TokenSequence& x, const DecodeOptions& opt) const {
        if (opt.beam == 0) throw InvalidArgument("generate: beam must be >= 1");
        validate_sequence(x, "generate");
        ad::Tape t;
        BoundWeights w(t, generator_, false);
        ad::Var p;
        if (prompt) p = t.constant(*prompt);
        const auto cache = cross_cache(t, w, encode(t, w, p, x));
        const std::size_t max_out = std::min(opt.max_out, config_.max_len - 1);

        struct Hyp {
            std::vector<std::size_t> tokens;
            double score = 0.0;
        };
        std::vector<Hyp> live{Hyp{}};
        std::vector<Hyp> finished;
        for (std::size_t step = 0; step <= max_out && !live.empty(); ++step) {
            struct Cand {
                double score;
                std::size_t parent;
                std::size_t token;
            };
            std::vector<Cand> cands;
            for (std::size_t b = 0; b < live.size(); ++b) {
                std::vector<std::size_t> dec_in{Vocab::kBos};
                dec_in.insert(dec_in.end(), live[b].tokens.begin(), live[b].tokens.end());
                const Matrix& logits = t.value(decode(t, w, cache, dec_in));
                const auto last = logits.row(logits.rows - 1);
                const double lse = log_sum_exp(last);
                const auto banned = banned_tokens(live[b].tokens, opt.no_repeat_ngram);
                for (std::size_t tok = 0; tok < config_.vocab_size; ++tok) {
                    if (tok == Vocab::kPad || tok == Vocab::kBos || tok == Vocab::kMask) continue;
                    if (tok != Vocab::kEos && step == max_out) continue;  // out of room: must stop
                    if (std::find(banned.begin(), banned.end(), tok) != banned.end()) continue;
                    cands.push_back({live[b].score + last[tok] - lse, b, tok});
                }
            }
            std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.token != b.token) return a.token < b.token;
                return a.parent < b.parent;
            });
            // EOS candidates ranked inside the beam retire; the rest refill it.
            std::vector<Hyp> next;
            for (const Cand& c : cands) {
                if (next.size() >= opt.beam) break;
                Hyp h{live[c.parent].tokens, c.score};
                if (c.token == Vocab::kEos) {
                    finished.push_back(std::move(h));
                } else {
                    h.tokens.push_back(c.token);
                    next.push_back(std::move(h));
                }
            }
            live = std::move(next);
            if (!finished.empty()) {
                const double best_done =
                    std::max_element(finished.begin(), finished.end(), [](const Hyp& a, const Hyp& b) {
                        return a.score < b.score;
                    })->score;
                double best_live = -std::numeric_limits<double>::infinity();
                for (const Hyp& h : live) best_live = std::max(best_live, h.score);
                // Log-probabilities only decrease, so no live hypothesis can overtake.
                if (finished.size() >= opt.beam || best_done >= best_live) break;
            }
        }
        const std::vector<Hyp>& pool = finished.empty() ? live : finished;
        TokenSequence out;
        if (pool.empty()) return out;
        const Hyp* best = &pool[0];
        for (const Hyp& h : pool)
            if (h.score > best->score) best = &h;
        out.ids = best->tokens;
        return out;
    }

    /// Mean of the instance encoder's top-layer states. When d differs from
    /// the encoder width the mean is mapped through a fixed seeded projection.
    std::vector<double> instance_encode(const TokenSequence& x, std::size_t d = 0) const {
        validate_sequence(x, "instance_encode");
        ad::Tape t;
        BoundWeights w(t, instance_, false);
        const auto h = nn::encoder_stack(t, w, embed_tokens(t, w, "ins.tok_emb", x.ids), "ins.enc.",
                                         config_.instance_layers, config_.heads);
        const Matrix& m = t.value(t.mean_rows(h));
        std::vector<double> q(m.data.begin(), m.data.end());
        const std::size_t e = config_.embed_dim;
        if (d == 0 || d == e) return q;
        SeededRng rng(derive_seed(config_.instance_seed, 0x51ULL));
        const Matrix proj = detail::normal_matrix(rng, e, d, 1.0 / std::sqrt(static_cast<double>(e)));
        std::vector<double> out(d, 0.0);
        for (std::size_t i = 0; i < e; ++i)
            for (std::size_t j = 0; j < d; ++j) out[j] += q[i] * proj(i, j);
        return out;
    }

    // ------------------------------------------------------------ persistence

    static constexpr int kFormatVersion = 1;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format_version"] = kFormatVersion;
        j["config"] = config_;
        j["frozen"] = frozen_;
        nlohmann::json weights = nlohmann::json::object();
        for (const auto* set : {&generator_, &instance_})
            for (const auto& [name, m] : *set) weights[name] = {{"shape", {m.rows, m.cols}}, {"data", m.data}};
        j["weights"] = std::move(weights);
        return j;
    }

    static BackboneModel from_json(const nlohmann::json& j) {
        try {
            const int version = j.at("format_version").get<int>();
            if (version != kFormatVersion)
                throw FormatError("backbone file: format_version " + std::to_string(version) + " unsupported");
            const auto cfg = j.at("config").get<BackboneConfig>();
            WeightSet gen, ins;
            for (const auto& [name, entry] : j.at("weights").items()) {
                const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
                if (shape.size() != 2) throw FormatError("backbone file: weight '" + name + "' shape must be 2-D");
                Matrix m(shape[0], shape[1], entry.at("data").get<std::vector<double>>());
                (name.rfind("ins.", 0) == 0 ? ins : gen).emplace(name, std::move(m));
            }
            return BackboneModel(cfg, std::move(gen), std::move(ins), j.at("frozen").get<bool>());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("backbone file: ") + e.what());
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("backbone file: ") + e.what());
        }
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw FileError("cannot write " + path.string());
        out << to_json().dump();
        if (!out) throw FileError("write failed for " + path.string());
    }

    static BackboneModel load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw FileError("cannot read " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("backbone file " + path.string() + ": " + e.what());
        }
        return from_json(j);
    }

private:
    static std::vector<std::size_t> banned_tokens(const std::vector<std::size_t>& seq, std::size_t n) {
        std::vector<std::size_t> banned;
        if (n == 0 || seq.size() + 1 < n) return banned;
        // The n-1 most recent tokens form the prefix of the next n-gram.
        const std::size_t k = n - 1;
        for (std::size_t start = 0; start + n <= seq.size(); ++start) {
            bool match = true;
            for (std::size_t j = 0; j < k; ++j)
                if (seq[start + j] != seq[seq.size() - k + j]) {
                    match = false;
                    break;
                }
            if (match) banned.push_back(seq[start + k]);
        }
        return banned;
    }

    static void check_shapes(const WeightSet& ref, const WeightSet& got) {
        for (const auto& [name, m] : ref) {
            auto it = got.find(name);
            if (it == got.end()) throw InvalidArgument("missing weight '" + name + "'");
            if (!it->second.same_shape(m))
                throw InvalidArgument("weight '" + name + "' has shape " + shape_str(it->second) + ", expected " +
                                      shape_str(m));
        }
        if (got.size() != ref.size()) throw InvalidArgument("unexpected extra weights");
    }

    BackboneConfig config_;
    WeightSet generator_;
    WeightSet instance_;
    bool frozen_ = false;
    Matrix positions_;
};

// ---------------------------------------------------------------- pretraining

struct DenoiseOptions {
    std::size_t steps = 2000;
    double mask_rate = 0.3;
    double lr = 3e-3;
    std::size_t batch = 8;
    std::uint64_t seed = 11;
};

struct DenoiseReport {
    std::vector<double> loss_curve;  // mean per-token nll per step
};

/// Token-masking denoiser: corrupt x with <mask> at `mask_rate`, reconstruct x.
inline std::pair<TokenSequence, TokenSequence> mask_tokens(const TokenSequence& x, double rate, SeededRng& rng) {
    TokenSequence noisy = x;
    bool any = false;
    for (std::size_t& id : noisy.ids)
        if (rng.uniform() < rate) {
            id = Vocab::kMask;
            any = true;
        }
    if (!any && !noisy.empty()) noisy.ids[rng.below(noisy.size())] = Vocab::kMask;
    return {noisy, x};
}

/// Returns the pretrained model flagged frozen.
inline BackboneModel pretrain_denoise(BackboneModel model, const std::vector<TokenSequence>& corpus,
                                      const DenoiseOptions& opt, DenoiseReport* report = nullptr) {
    if (corpus.empty()) throw InvalidArgument("pretrain_denoise: empty corpus");
    model.unfreeze();
    WeightSet& w = model.mutable_generator_weights();
    std::vector<std::pair<std::string, std::size_t>> layout;
    std::size_t total = 0;
    for (const auto& [name, m] : w) {
        layout.emplace_back(name, total);
        total += m.size();
    }
    AdamState adam(total, opt.lr);
    SeededRng rng(opt.seed);
    std::vector<double> flat(total), grads(total);
    for (std::size_t step = 0; step < opt.steps; ++step) {
        std::fill(grads.begin(), grads.end(), 0.0);
        double loss = 0.0;
        std::size_t tokens = 0;
        for (std::size_t b = 0; b < opt.batch; ++b) {
            const auto& x = corpus[rng.below(corpus.size())];
            const auto [noisy, target] = mask_tokens(x, opt.mask_rate, rng);
            const auto lg = model.loss_and_grads(nullptr, noisy, target, {.prompt = false, .backbone = true});
            loss += lg.nll;
            tokens += target.size() + 1;
            for (const auto& [name, off] : layout) {
                const Matrix& g = lg.weight_grads.at(name);
                for (std::size_t i = 0; i < g.size(); ++i) grads[off + i] += g.data[i];
            }
        }
        if (!std::isfinite(loss)) throw NumericError("pretrain_denoise: non-finite loss at step " + std::to_string(step));
        const double inv = 1.0 / static_cast<double>(tokens);
        for (double& g : grads) g *= inv;
        for (const auto& [name, off] : layout) std::copy(w[name].data.begin(), w[name].data.end(), flat.begin() + static_cast<std::ptrdiff_t>(off));
        adam_step(flat, grads, adam);
        for (const auto& [name, off] : layout) {
            Matrix& m = w[name];
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.begin() + static_cast<std::ptrdiff_t>(off + m.size()), m.data.begin());
        }
        if (report) report->loss_curve.push_back(loss * inv);
    }
    model.freeze();
    return model;
}

}  // namespace prompt_forge
