#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include "clearsky/rng.hpp"
#include "clearsky/tensor.hpp"

namespace clearsky {

/// Desk-scale network hyperparameters.
struct NetworkConfig {
    int stages = 4;
    int base_channels = 16;
    int query_len = 48;       // L, rows of the learnable query sequence
    int head_count = 2;
    int key_dim = 16;         // d_k per head; total query width = head_count * key_dim
    double ffc_global_ratio = 0.5;
    int input_channels = 3;
    int attn_window = 8;      // spatial window (tokens side) for decoder cross-attention
    bool ffc_bottleneck_only = false;

    int query_width() const { return head_count * key_dim; }
    int stage_channels(int stage_index) const {  // channels after stage (1-based depth)
        return base_channels << stage_index;
    }
    int mixup_count() const { return stages; }

    void validate() const {
        auto fail = [](const std::string& field) {
            throw ConfigError("NetworkConfig: invalid field " + field);
        };
        if (stages < 3) fail("stages (need >= 3 for the task-query fusion)");
        if (base_channels < 1) fail("base_channels");
        if (query_len < 1) fail("query_len");
        if (head_count < 1) fail("head_count");
        if (key_dim < 1) fail("key_dim");
        if (input_channels != 3) fail("input_channels (must be 3)");
        if (attn_window < 1) fail("attn_window");
        if (ffc_global_ratio < 0.0 || ffc_global_ratio > 1.0) fail("ffc_global_ratio");
        if (ffc_global_ratio > 0.0 && ffc_global_ratio < 1.0) {
            // Narrowest channel width that meets the FFC split.
            int c = base_channels;
            int g = static_cast<int>(std::lround(ffc_global_ratio * c));
            if (g < 1 || g >= c) fail("ffc_global_ratio (rounds a branch to zero channels)");
        }
    }

    std::string canonical() const {
        std::ostringstream os;
        os << "stages=" << stages << ";base_channels=" << base_channels << ";query_len=" << query_len
           << ";head_count=" << head_count << ";key_dim=" << key_dim
           << ";ffc_global_ratio=" << ffc_global_ratio << ";input_channels=" << input_channels
           << ";attn_window=" << attn_window << ";ffc_bottleneck_only=" << (ffc_bottleneck_only ? 1 : 0);
        return os.str();
    }

    uint64_t hash() const { return fnv1a64(canonical()); }

    bool operator==(const NetworkConfig&) const = default;
};

}  // namespace clearsky
