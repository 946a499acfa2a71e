#include "dqf/tokenizer.hpp"

#include <algorithm>

#include "dqf/error.hpp"

namespace dqf {

std::vector<char32_t> utf8_decode(std::string_view text) {
    std::vector<char32_t> out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (c < 0x80) {
            len = 1;
            cp = c;
        } else if ((c >> 5) == 0x6) {
            len = 2;
            cp = c & 0x1f;
        } else if ((c >> 4) == 0xe) {
            len = 3;
            cp = c & 0x0f;
        } else if ((c >> 3) == 0x1e) {
            len = 4;
            cp = c & 0x07;
        } else {
            throw IngestionError("invalid UTF-8 lead byte at offset " + std::to_string(i));
        }
        if (i + len > text.size()) throw IngestionError("truncated UTF-8 sequence at offset " + std::to_string(i));
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc >> 6) != 0x2) throw IngestionError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
            cp = (cp << 6) | (cc & 0x3f);
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string utf8_encode(char32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s += static_cast<char>(cp);
    } else if (cp < 0x800) {
        s += static_cast<char>(0xc0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3f));
    } else if (cp < 0x10000) {
        s += static_cast<char>(0xe0 | (cp >> 12));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
        s += static_cast<char>(0x80 | (cp & 0x3f));
    } else {
        s += static_cast<char>(0xf0 | (cp >> 18));
        s += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
        s += static_cast<char>(0x80 | (cp & 0x3f));
    }
    return s;
}

CharTokenizer::CharTokenizer(std::vector<char32_t> vocabulary) : vocab_(std::move(vocabulary)) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        if (!index_.emplace(vocab_[i], i).second) throw IngestionError("duplicate vocabulary entry");
        if (i > 0 && vocab_[i] < vocab_[i - 1]) throw IngestionError("vocabulary must be sorted");
    }
}

CharTokenizer CharTokenizer::build(std::string_view corpus) {
    if (corpus.empty()) throw IngestionError("cannot build a tokenizer from an empty corpus");
    auto cps = utf8_decode(corpus);
    std::sort(cps.begin(), cps.end());
    cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
    return CharTokenizer(std::move(cps));
}

std::vector<std::size_t> CharTokenizer::encode(std::string_view text) const {
    std::vector<std::size_t> ids;
    for (char32_t cp : utf8_decode(text)) {
        auto it = index_.find(cp);
        if (it == index_.end())
            throw VocabError("character U+" + std::to_string(static_cast<unsigned>(cp)) + " is not in the vocabulary");
        ids.push_back(it->second);
    }
    return ids;
}

std::string CharTokenizer::decode(const std::vector<std::size_t>& ids) const {
    std::string s;
    for (auto id : ids) s += token_text(id);
    return s;
}

std::string CharTokenizer::token_text(std::size_t id) const {
    if (id >= vocab_.size()) throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
    return utf8_encode(vocab_[id]);
}

}  // namespace dqf
