#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mks2/common.hpp"

namespace mks2 {

inline constexpr int kNumColors = 8;
inline constexpr int kNumShapes = 8;
inline constexpr int kMaxCount = 4;
inline constexpr int kLexiconSize = 512;

// Word-level tokenizer over a closed, fixed vocabulary: specials, template
// words, attribute words, digits, and a nonce lexicon that entity names are
// drawn from. The vocabulary does not depend on any seed, so every world
// shares one token space.
class Tokenizer {
public:
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr int begin_id = 2;
    static constexpr int eos_id = 3;
    static constexpr int inst_open_id = 4;
    static constexpr int inst_close_id = 5;
    static constexpr int img_start_id = 6;
    static constexpr int img_end_id = 7;

    Tokenizer() {
        for (const char* w : {"<pad>", "<unk>", "<begin>", "</s>", "[INST]", "[/INST]",
                              "<img-start>", "<img-end>"})
            push_(w);

        static const char* template_words[] = {
            "a",      "an",      "the",    "this",  "is",     "are",     "in",    "of",
            "and",    "or",      "photo",  "named", "what",   "how",     "many",  "color",
            "shape",  "count",   "shown",  "object", "objects", "yes",   "no",    "same",
            "share",  "do",      "does",   "it",    "there",  "describe", "tell", "me",
            "about",  "thing",   "?",      ",",     "."};
        for (const char* w : template_words) push_(w);

        static const char* colors[] = {"red",    "blue",   "green", "yellow",
                                       "purple", "orange", "black", "white"};
        color_begin_ = static_cast<int>(id_to_word_.size());
        for (const char* w : colors) push_(w);

        static const char* shapes[] = {"cube",     "sphere",  "cone", "prism",
                                       "cylinder", "pyramid", "disk", "ring"};
        shape_begin_ = static_cast<int>(id_to_word_.size());
        for (const char* w : shapes) push_(w);
        shape_plural_begin_ = static_cast<int>(id_to_word_.size());
        for (const char* w : shapes) push_(std::string(w) + "s");

        count_begin_ = static_cast<int>(id_to_word_.size());
        for (int i = 1; i <= kMaxCount; ++i) push_(std::to_string(i));

        lexicon_begin_ = static_cast<int>(id_to_word_.size());
        build_lexicon_();
    }

    int vocab_size() const { return static_cast<int>(id_to_word_.size()); }

    int lookup(std::string_view w) const {
        auto it = word_to_id_.find(std::string(w));
        return it == word_to_id_.end() ? unk_id : it->second;
    }

    const std::string& word(int id) const {
        if (id < 0 || id >= vocab_size())
            throw shape_error("tokenizer: id " + std::to_string(id) + " outside vocabulary");
        return id_to_word_[static_cast<size_t>(id)];
    }

    std::vector<int> encode(std::string_view text) const {
        std::vector<int> ids;
        std::istringstream is{std::string(text)};
        std::string w;
        while (is >> w) ids.push_back(lookup(w));
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += word(ids[i]);
        }
        return out;
    }

    int color_id(int c) const { return color_begin_ + c; }
    int shape_id(int s, bool plural) const { return (plural ? shape_plural_begin_ : shape_begin_) + s; }
    int count_id(int c) const { return count_begin_ + (c - 1); }
    const std::string& color_word(int c) const { return word(color_id(c)); }
    const std::string& shape_word(int s, bool plural) const { return word(shape_id(s, plural)); }
    std::string count_word(int c) const { return std::to_string(c); }

    bool is_name_token(int id) const { return id >= lexicon_begin_ && id < vocab_size(); }
    int lexicon_begin() const { return lexicon_begin_; }
    const std::string& lexicon_word(int i) const { return word(lexicon_begin_ + i); }

private:
    void push_(const std::string& w) {
        if (!word_to_id_.emplace(w, static_cast<int>(id_to_word_.size())).second)
            throw contract_error("tokenizer: duplicate word '" + w + "'");
        id_to_word_.push_back(w);
    }

    // Nonce words: two consonant-vowel syllables plus an occasional coda,
    // enumerated in a fixed scrambled order. Anything colliding with an
    // existing vocabulary word is skipped.
    void build_lexicon_() {
        static const char cons[] = {'b', 'd', 'f', 'g', 'j', 'k', 'l', 'm',
                                    'n', 'p', 'r', 's', 't', 'v', 'w', 'z'};
        static const char vows[] = {'a', 'e', 'i', 'o', 'u'};
        static const char codas[] = {'k', 'n', 'r', 'x'};
        int made = 0;
        for (uint64_t i = 0; made < kLexiconSize && i < 6400; ++i) {
            const uint64_t j = (i * 2521) % 6400; // 2521 is coprime to 6400
            const uint64_t s1 = j / 80, s2 = j % 80;
            std::string w;
            w += cons[s1 / 5];
            w += vows[s1 % 5];
            w += cons[s2 / 5];
            w += vows[s2 % 5];
            if (i % 3 == 2) w += codas[(i / 3) % 4];
            if (word_to_id_.count(w)) continue;
            push_(w);
            ++made;
        }
        if (made != kLexiconSize) throw contract_error("tokenizer: lexicon underfilled");
    }

    std::vector<std::string> id_to_word_;
    std::unordered_map<std::string, int> word_to_id_;
    int color_begin_ = 0, shape_begin_ = 0, shape_plural_begin_ = 0, count_begin_ = 0,
        lexicon_begin_ = 0;
};

} // namespace mks2
