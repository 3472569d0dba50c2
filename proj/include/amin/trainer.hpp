#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "amin/config.hpp"
#include "amin/data_pipeline.hpp"
#include "amin/loss.hpp"
#include "amin/model.hpp"

namespace amin {

inline constexpr char kCheckpointMagic[8] = {'A', 'M', 'I', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kLatestCheckpoint = "checkpoint_latest.bin";
inline constexpr const char* kFinalCheckpoint = "checkpoint_final.bin";
inline constexpr const char* kLossLog = "loss_log.tsv";

// Everything needed to continue an optimisation bit-exactly.
struct TrainState {
    ModelParams<float> model;
    std::vector<Tensor<float>> adam_m;  // one per parameter, same order as model.parameters()
    std::vector<Tensor<float>> adam_v;
    std::int64_t step = 0;              // completed optimizer steps
    std::uint64_t seed = 0;             // master shuffle seed
    std::string rng_state;              // shuffle engine state at the start of the current epoch
    TrainConfig train;
    LossConfig loss;
};

TrainState init_state(const ModelConfig& model, const TrainConfig& train, const LossConfig& loss);

struct StepRecord {
    std::int64_t step = 0;
    int epoch = 0;
    std::string pair_id;
    AdaptiveWeights weights;
    double ssim_term = 0;
    double rmi_term = 0;
    double total = 0;
    bool degenerate = false;
};

// Forward, adaptive weights from the sources, loss, backward and one Adam update.
// A sample whose weights are all zero leaves the parameters and moments untouched
// but still advances the step counter.
StepRecord train_step(TrainState& state, const ImagePair& pair);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
// Also rejects a checkpoint whose stored model configuration differs from expected.
TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// Training samples in manifest order: 36 crops per pair, or whole pairs when
// patches are disabled. Images are decoded on demand.
class SampleSource {
public:
    SampleSource(std::vector<ManifestEntry> entries, bool use_patches);
    std::size_t size() const;
    ImagePair get(std::size_t index) const;

private:
    std::vector<ManifestEntry> entries_;
    bool use_patches_;
};

// Seeded permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n);

struct TrainCallbacks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const std::string&)> on_warning;
};

// Runs (or resumes, when out_dir holds checkpoint_latest.bin) the full loop.
// Writes loss_log.tsv, periodic checkpoint_latest.bin and checkpoint_final.bin.
TrainState train(const ModelConfig& model, const TrainConfig& config, const LossConfig& loss,
                 const std::filesystem::path& out_dir, const TrainCallbacks& callbacks = {});

}  // namespace amin
