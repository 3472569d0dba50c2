#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace amin {

// Flat "section.key=value" store. Later assignments win, so command-line
// overrides are applied on top of the file contents.
class KeyValueConfig {
public:
    static KeyValueConfig from_file(const std::filesystem::path& path);
    static KeyValueConfig from_text(const std::string& text);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    // Parses "key=value".
    void set_assignment(const std::string& assignment);
    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> get(const std::string& key) const;
    const std::map<std::string, std::string>& values() const { return values_; }
    // Keys not consumed by any typed config; unknown keys are a ConfigError upstream.
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

private:
    std::map<std::string, std::string> values_;
};

struct ModelConfig {
    int idb_count = 6;
    int tmu_count = 3;
    std::vector<int> branch_kernels{3, 5, 7};
    bool use_cbam = true;
    int channels = 16;          // IDN feature width C, split C/2 : C/2 by the couplings
    int growth = 4;             // dense growth g
    bool separate_st_nets = false;
    int embed_dim = 16;         // token width d = (pre-fusion channels) * patch^2
    int patch = 4;
    int heads = 8;
    int mlp_ratio = 4;
    int reduction = 4;          // CBAM channel MLP reduction r
    int branch_width = 8;
    int comp_width = 16;
    double clamp = 2.0;
    double leaky_slope = 0.01;
    std::uint64_t seed = 42;

    void validate() const;
    int token_channels() const { return embed_dim / (patch * patch); }
    std::string to_text() const;  // canonical "model.key=value" lines
    static ModelConfig from(const KeyValueConfig& kv);
    bool operator==(const ModelConfig&) const = default;
};

struct LossConfig {
    bool normalize_weights = false;
    // {alpha1, alpha2, beta1, beta2}; unset means adaptive AG/EN weights.
    std::optional<std::array<double, 4>> fixed_weights;

    std::string to_text() const;
    static LossConfig from(const KeyValueConfig& kv);
    bool operator==(const LossConfig&) const = default;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 1;
    int epochs = 30;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 42;
    std::int64_t checkpoint_every = 500;
    std::int64_t max_steps = 0;       // 0: run all epochs
    bool use_patches = true;          // 36-patch cropping; off trains on whole pairs
    double grad_clip = 0.0;           // max global norm; 0 disables
    std::string manifest_path;

    void validate() const;
    std::string to_text() const;
    static TrainConfig from(const KeyValueConfig& kv);
};

struct AblateConfig {
    int epochs = 2;
    std::int64_t max_steps = 0;
    int max_pairs = 20;

    static AblateConfig from(const KeyValueConfig& kv);
    std::string to_text() const;
};

std::vector<int> parse_int_list(const std::string& text);
bool parse_bool(const std::string& text);

}  // namespace amin
