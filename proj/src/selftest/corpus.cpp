#include "selftest/corpus.hpp"

#include "dqf/training.hpp"

namespace dqf::selftest {

std::string data_path(const std::string& name) { return std::string(DQF_DATA_DIR) + "/" + name; }

std::string english_corpus() { return read_text_file(data_path("corpus_en.txt")); }

std::string memorization_text(std::size_t copies) {
    std::string text;
    for (std::size_t i = 0; i < copies; ++i) text += kMotif;
    return text;
}

}  // namespace dqf::selftest
