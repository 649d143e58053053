// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prompt_forge/numerics.hpp"

namespace prompt_forge {

/// Token ids of a whitespace-tokenized sequence.
struct TokenSequence {
    std::vector<std::size_t> ids;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// The fixed 64-symbol vocabulary: 4 specials, 50 content symbols
/// (a-z, A-X) and 10 control symbols used by the task generators.
class Vocab {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kBos = 1;
    static constexpr std::size_t kEos = 2;
    static constexpr std::size_t kMask = 3;
    static constexpr std::size_t kFirstContent = 4;
    static constexpr std::size_t kContentCount = 50;
    static constexpr std::size_t kFirstControl = kFirstContent + kContentCount;
    static constexpr std::size_t kSize = 64;

    static const Vocab& instance() {
        static const Vocab v;
        return v;
    }

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(std::size_t id) const { return tokens_.at(id); }

    std::optional<std::size_t> find(std::string_view tok) const {
        for (std::size_t i = 0; i < tokens_.size(); ++i)
            if (tokens_[i] == tok) return i;
        return std::nullopt;
    }

    std::size_t id(std::string_view tok) const {
        if (auto i = find(tok)) return *i;
        throw InvalidArgument("unknown token '" + std::string(tok) + "'");
    }

    static bool is_content(std::size_t id) { return id >= kFirstContent && id < kFirstControl; }
    static bool is_special(std::size_t id) { return id < kFirstContent; }

    TokenSequence encode(std::string_view text) const {
        TokenSequence seq;
        std::istringstream in{std::string(text)};
        std::string tok;
        while (in >> tok) seq.ids.push_back(id(tok));
        return seq;
    }

    std::string decode(const TokenSequence& seq) const {
        std::string out;
        for (std::size_t i = 0; i < seq.ids.size(); ++i) {
            if (i) out += ' ';
            out += token(seq.ids[i]);
        }
        return out;
    }

    /// Content symbol by index in [0, 50).
    static std::size_t content(std::size_t k) { return kFirstContent + k; }

private:
    Vocab() {
        tokens_ = {"<pad>", "<bos>", "<eos>", "<mask>"};
        for (char c = 'a'; c <= 'z'; ++c) tokens_.emplace_back(1, c);
        for (char c = 'A'; c <= 'X'; ++c) tokens_.emplace_back(1, c);
        for (const char* c : {"*", "@", "^", "~", "#", "|", "P0", "P1", "P2", "P3"}) tokens_.emplace_back(c);
    }

    std::vector<std::string> tokens_;
};

}  // namespace prompt_forge
