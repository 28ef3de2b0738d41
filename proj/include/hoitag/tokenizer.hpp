#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hoitag/vocab.hpp"

namespace hoitag {

namespace special {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kHoi = 3;
inline constexpr int kSep = 4;
inline constexpr int kUnk = 5;
inline constexpr int kCount = 6;
}  // namespace special

/// Word-level tokenizer over the closed caption grammar. Ids 0-5 are the
/// specials; "," and "." are standalone tokens glued to the previous word on
/// detokenisation.
class Tokenizer {
public:
    explicit Tokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        static const char* kSpecials[] = {"[PAD]", "[BOS]", "[EOS]", "[HOI]", "[SEP]", "[UNK]"};
        if (tokens_.size() < special::kCount) throw std::invalid_argument("tokenizer: missing special tokens");
        for (int i = 0; i < special::kCount; ++i)
            if (tokens_[i] != kSpecials[i]) throw std::invalid_argument("tokenizer: specials must occupy ids 0-5");
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
                throw std::invalid_argument("tokenizer: duplicate token " + tokens_[i]);
        }
    }

    /// Specials, grammar words, then the vocabulary's entity and action names.
    static Tokenizer for_vocabulary(const Vocabulary& vocab) {
        std::vector<std::string> t = {"[PAD]", "[BOS]", "[EOS]", "[HOI]", "[SEP]", "[UNK]",
                                      "The",   "the",   "scene", "shows", "a",     "and",
                                      ",",     ".",     "A",     "No",    "threat", "is",
                                      "detected"};
        for (const auto& e : vocab.entities) t.push_back(e);
        for (const auto& a : vocab.actions) t.push_back(a);
        return Tokenizer(std::move(t));
    }

    static Tokenizer load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open vocabulary file " + path);
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(in, line)) tokens.push_back(line);
        return Tokenizer(std::move(tokens));
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write vocabulary file " + path);
        for (const auto& t : tokens_) out << t << '\n';
    }

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    /// Id of `word`, or [UNK].
    int id(std::string_view word) const {
        auto it = ids_.find(std::string(word));
        return it == ids_.end() ? special::kUnk : it->second;
    }
    bool contains(std::string_view word) const { return ids_.count(std::string(word)) > 0; }

    std::vector<int> tokenize(std::string_view text) const {
        std::vector<int> out;
        std::istringstream in{std::string(text)};
        std::string word;
        while (in >> word) {
            std::vector<std::string> trailing;
            while (word.size() > 1 && (word.back() == ',' || word.back() == '.')) {
                trailing.insert(trailing.begin(), std::string(1, word.back()));
                word.pop_back();
            }
            out.push_back(id(word));
            for (const auto& p : trailing) out.push_back(id(p));
        }
        return out;
    }

    /// Inverse of tokenize on grammar text. [PAD], [BOS] and [EOS] are dropped.
    std::string detokenize(const std::vector<int>& ids) const {
        std::string out;
        for (int i : ids) {
            if (i == special::kPad || i == special::kBos || i == special::kEos) continue;
            const std::string& w = token(i);
            const bool glue = (w == "," || w == ".");
            if (!out.empty() && !glue) out += ' ';
            out += w;
        }
        return out;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace hoitag
