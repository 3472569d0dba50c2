#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "amin/config.hpp"
#include "amin/metrics.hpp"

namespace amin {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitUsage = 2,
    kExitData = 3,
    kExitNumerics = 4,
};

// Every configuration a command can see, after file contents and overrides.
struct ResolvedConfig {
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    AblateConfig ablate;

    std::string to_text() const;
};

// Applies the file (if any), then each "key=value" override in order. Keys that no
// section understands are rejected so typos cannot silently fall back to defaults.
ResolvedConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides);

// One ablation variant: a name plus the configuration edits it applies to the base.
struct AblationVariant {
    std::string name;
    std::optional<int> idb_count;
    std::optional<int> tmu_count;
    std::optional<bool> use_cbam;
    std::optional<std::vector<int>> branch_kernels;
    bool adaptive = false;                                // forces adaptive loss weights
    std::optional<std::array<double, 4>> fixed_weights;  // alpha1, alpha2, beta1, beta2

    void apply(ModelConfig& model, LossConfig& loss) const;
};

// Loss-weight quadruples compared against the adaptive weights.
inline constexpr std::array<std::array<double, 4>, 8> kWeightGrid{{
    {0.2, 0.8, 1, 1},
    {0.4, 0.6, 1, 1},
    {0.6, 0.4, 1, 1},
    {0.8, 0.2, 1, 1},
    {1, 1, 0.2, 0.8},
    {1, 1, 0.4, 0.6},
    {1, 1, 0.6, 0.4},
    {1, 1, 0.8, 0.2},
}};

// Comma-separated list of variant names (full, IDB_k, TMU_k, CBAM_0, CBAM_1,
// all3x3, all5x5, all7x7, mixed, adaptive, W_a_b_c_d) and presets (structural,
// weights, all). Unknown names raise ConfigError.
std::vector<AblationVariant> parse_grid(const std::string& grid);

struct RankRow {
    std::string variant;
    std::array<int, 8> ranks{};  // per metric, 1 = best (highest value)
    int rank_sum = 0;
};

// Competition ranking per metric (ties share the better rank), summed; rows are
// sorted by ascending rank sum, then by name.
std::vector<RankRow> rank_variants(const std::vector<MetricReport>& means);
void write_rank_table(std::ostream& out, const std::vector<RankRow>& rows);

// Entry point behind the amin executable. argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace amin
