#pragma once

#include <string>
#include <vector>

namespace cseg {

// Architecture description. Names follow the grammar Unet{IS}X{MF}X{N} with an optional
// "-SE" suffix, e.g. "Unet96X1024X4-SE".
struct UNetConfig {
    int input_size = 96;    // IS, square tile side in pixels
    int max_filters = 256;  // MF, bottleneck width
    int depth = 4;          // N, downsample/upsample stages
    bool use_se = false;
    bool use_residual = false;
    int in_channels = 3;
    int se_ratio = 16;
    bool batchnorm = true;

    // F0 = MF / 2^N
    int base_filters() const;
    // Width of encoder/decoder stage i (0-based); stage_width(depth) is the bottleneck.
    int stage_width(int stage) const;
    std::vector<int> encoder_widths() const;

    // Canonical architecture name; the residual variant appends "-RES" (not a table name).
    std::string name() const;

    // Throws ConfigError when an invariant fails.
    void validate() const;

    // key=value lines, fixed key order. Round-trips through parse_config_text.
    std::string to_text() const;

    bool operator==(const UNetConfig&) const = default;
};

UNetConfig parse_config_name(const std::string& name);
UNetConfig parse_config_text(const std::string& text);

// The ten benchmark architecture names, in benchmark order.
const std::vector<std::string>& results_table_names();

}  // namespace cseg
