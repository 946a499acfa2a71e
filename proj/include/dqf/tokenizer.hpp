#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dqf {

// Character-level tokenizer over Unicode code points. Ids are dense and
// follow code-point order.
class CharTokenizer {
   public:
    CharTokenizer() = default;
    explicit CharTokenizer(std::vector<char32_t> vocabulary);

    static CharTokenizer build(std::string_view corpus);

    std::size_t size() const { return vocab_.size(); }
    const std::vector<char32_t>& vocabulary() const { return vocab_; }

    std::vector<std::size_t> encode(std::string_view text) const;
    std::string decode(const std::vector<std::size_t>& ids) const;
    std::string token_text(std::size_t id) const;

   private:
    std::vector<char32_t> vocab_;
    std::unordered_map<char32_t, std::size_t> index_;
};

std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(char32_t cp);

}  // namespace dqf
