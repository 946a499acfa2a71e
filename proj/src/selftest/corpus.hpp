#pragma once

#include <cstddef>
#include <string>

namespace dqf::selftest {

// Path of a file under tests/data.
std::string data_path(const std::string& name);

// About 1 MB of English prose (tests/data/corpus_en.txt).
std::string english_corpus();

inline constexpr const char* kMotif = "The quick brown fox jumps over the lazy dog while 7 cats watch!!";

std::string memorization_text(std::size_t copies = 50);

}  // namespace dqf::selftest
