#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cseg {

enum class GradcheckScope { layer, block, model, all };

GradcheckScope parse_gradcheck_scope(const std::string& s);

struct GradcheckOptions {
    double step = 1e-5;
    // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps structurally zero
    // gradients (e.g. a conv bias feeding batch norm) from dividing rounding noise by itself.
    double floor = 1e-5;
    double tolerance_primitive = 1e-4;  // layers and blocks
    double tolerance_model = 1e-3;      // full network
    std::size_t max_elements = 200;     // sampled per group; groups at or below this are checked fully
    std::uint64_t seed = 1234;
};

struct GradGroupResult {
    std::string scope;  // layer | block | model
    std::string check;  // which op / block / network
    std::string group;  // parameter or input name
    std::size_t elements = 0;
    std::size_t skipped = 0;  // finite difference straddled a ReLU or max-pool kink
    double max_rel_error = 0;
    double tolerance = 0;
    bool passed() const { return skipped < elements && max_rel_error <= tolerance; }
};

struct GradcheckReport {
    std::vector<GradGroupResult> groups;
    double seconds = 0;
    bool passed() const;
    std::string table() const;  // scope,check,group,elements,skipped,max_rel_error,tolerance,status
};

// Central-difference check in 64-bit mode over every parameter group and the input of each case.
GradcheckReport gradient_check(GradcheckScope scope, const GradcheckOptions& options = {});

}  // namespace cseg
