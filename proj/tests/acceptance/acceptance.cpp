// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Usage: acceptance [--only 1,2,...] [--work DIR] [--quiet]

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "selftest/criteria.hpp"

int main(int argc, char** argv) {
    dqf::selftest::Context ctx;
    ctx.work_dir = (std::filesystem::temp_directory_path() / "dqf-acceptance").string();
    ctx.log = &std::cerr;
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string item;
            while (std::getline(ss, item, ',')) only.push_back(std::stoi(item));
        } else if (a == "--work" && i + 1 < argc) {
            ctx.work_dir = argv[++i];
        } else if (a == "--quiet") {
            ctx.log = nullptr;
        } else {
            std::cerr << "usage: acceptance [--only 1,2,...] [--work DIR] [--quiet]\n";
            return 1;
        }
    }
    const auto results = dqf::selftest::run(ctx, only);
    int failed = 0;
    std::cout << "\nacceptance summary\n";
    for (const auto& r : results) {
        std::cout << dqf::selftest::format(r) << '\n';
        if (!r.pass) ++failed;
    }
    std::cout << results.size() - failed << "/" << results.size() << " criteria passed\n";
    return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
