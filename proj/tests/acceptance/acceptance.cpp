// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <cstdio>
#include <cstdlib>
#include <string>

#include "mfgcn/verification/battery.hpp"

int main(int argc, char** argv) {
    mfgcn::verify::BatteryOptions opt;
    if (argc > 1) opt.seed = std::strtoull(argv[1], nullptr, 10);
    mfgcn::verify::Battery battery(opt);
    const auto results = battery.run_all([](const mfgcn::verify::CriterionResult& r) {
        std::fprintf(stderr, "  ran %s (%.1fs)\n", r.id.c_str(), r.seconds);
    });
    int failed = 0;
    for (const auto& r : results) {
        std::printf("%s %-28s %s\n", r.passed ? "PASS" : "FAIL", r.id.c_str(), r.detail.c_str());
        failed += r.passed ? 0 : 1;
    }
    std::printf("%zu criteria, %d failed\n", results.size(), failed);
    return failed == 0 ? 0 : 1;
}
