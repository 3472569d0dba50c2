#include "amin/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace amin {

namespace {

std::string engine_state(const std::mt19937_64& engine) {
    std::ostringstream os;
    os << engine;
    return os.str();
}

std::mt19937_64 epoch_engine(std::uint64_t seed, int epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    return std::mt19937_64(seq);
}

std::string describe(const StepRecord& r) {
    std::ostringstream os;
    os << "step " << r.step << " pair " << r.pair_id << " weights (" << r.weights.alpha1 << ", " << r.weights.alpha2
       << ", " << r.weights.beta1 << ", " << r.weights.beta2 << ") ssim_term " << r.ssim_term << " rmi_term "
       << r.rmi_term << " total " << r.total;
    return os.str();
}

}  // namespace

TrainState init_state(const ModelConfig& model, const TrainConfig& train, const LossConfig& loss) {
    train.validate();
    TrainState s;
    s.model = build_model<float>(model, model.seed);
    for (const auto& p : s.model.parameters()) {
        const auto& v = p.var.value();
        s.adam_m.emplace_back(v.channels(), v.height(), v.width());
        s.adam_v.emplace_back(v.channels(), v.height(), v.width());
    }
    s.seed = train.seed;
    s.rng_state = engine_state(epoch_engine(train.seed, 0));
    s.train = train;
    s.loss = loss;
    return s;
}

StepRecord train_step(TrainState& state, const ImagePair& pair) {
    const Plane& mri = pair.mri;
    const Plane& func = pair.functional_y;
    ParamList<float> params = state.model.parameters();
    for (auto& p : params) p.var.zero_grad();

    auto out = forward_graph(state.model, ag::constant(to_tensor<float>(mri)), ag::constant(to_tensor<float>(func)));
    const AdaptiveWeights weights = resolve_weights(mri, func, state.loss);
    LossBreakdown<float> loss = total_loss(out.fused, mri, func, weights);

    StepRecord rec;
    rec.step = state.step + 1;
    rec.pair_id = pair.identifier;
    rec.weights = weights;
    rec.ssim_term = loss.ssim_term;
    rec.rmi_term = loss.rmi_term;
    rec.total = loss.total;
    rec.degenerate = loss.degenerate;
    if (!std::isfinite(loss.total)) throw NumericsError("non-finite loss at " + describe(rec));

    if (!loss.degenerate) {
        ag::backward(loss.total_var);

        double norm2 = 0;
        for (const auto& p : params) {
            for (float g : p.var.grad().span()) norm2 += static_cast<double>(g) * g;
        }
        if (!std::isfinite(norm2)) throw NumericsError("non-finite gradient at " + describe(rec));
        float clip = 1.0f;
        if (state.train.grad_clip > 0 && norm2 > state.train.grad_clip * state.train.grad_clip) {
            clip = static_cast<float>(state.train.grad_clip / std::sqrt(norm2));
        }

        const double t = static_cast<double>(rec.step);
        const float b1 = static_cast<float>(state.train.adam_beta1);
        const float b2 = static_cast<float>(state.train.adam_beta2);
        const float eps = static_cast<float>(state.train.adam_eps);
        const float lr = static_cast<float>(state.train.learning_rate);
        const float c1 = static_cast<float>(1.0 - std::pow(state.train.adam_beta1, t));
        const float c2 = static_cast<float>(1.0 - std::pow(state.train.adam_beta2, t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& grad = params[i].var.grad();
            if (grad.empty()) continue;  // parameter not reached by this graph
            Tensor<float>& w = params[i].var.mutable_value();
            Tensor<float>& m = state.adam_m[i];
            Tensor<float>& v = state.adam_v[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const float g = grad[k] * clip;
                m[k] = b1 * m[k] + (1.0f - b1) * g;
                v[k] = b2 * v[k] + (1.0f - b2) * g * g;
                const float mhat = m[k] / c1;
                const float vhat = v[k] / c2;
                w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
        for (auto& p : params) p.var.zero_grad();
    }
    state.step = rec.step;
    return rec;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, config text, counters, tensor records
// (name, dims, float32 values, Adam m, Adam v), then an FNV-1a checksum of
// everything before it. All integers and floats are little-endian.

namespace {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    template <typename U>
    void scalar(U v) {
        static_assert(std::is_arithmetic_v<U>);
        if constexpr (std::endian::native == std::endian::big) {
            char tmp[sizeof(U)];
            std::memcpy(tmp, &v, sizeof(U));
            std::reverse(tmp, tmp + sizeof(U));
            bytes(tmp, sizeof(U));
        } else {
            bytes(&v, sizeof(U));
        }
    }
    void string(const std::string& s) {
        scalar<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void floats(const Tensor<float>& t) {
        for (float f : t.span()) scalar(f);
    }
    std::vector<char>& buffer() { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(const std::vector<char>& buf, std::size_t end) : buf_(buf), end_(end) {}
    void bytes(void* p, std::size_t n) {
        if (pos_ + n > end_) throw CheckpointVersionError("checkpoint is truncated");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    template <typename U>
    U scalar() {
        U v;
        if constexpr (std::endian::native == std::endian::big) {
            char tmp[sizeof(U)];
            bytes(tmp, sizeof(U));
            std::reverse(tmp, tmp + sizeof(U));
            std::memcpy(&v, tmp, sizeof(U));
        } else {
            bytes(&v, sizeof(U));
        }
        return v;
    }
    std::string string() {
        const auto n = scalar<std::uint32_t>();
        if (pos_ + n > end_) throw CheckpointVersionError("checkpoint is truncated");
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    void floats(Tensor<float>& t) {
        for (float& f : t.span()) f = scalar<float>();
    }
    bool done() const { return pos_ == end_; }

private:
    const std::vector<char>& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    Writer w;
    w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.scalar<std::uint32_t>(kCheckpointVersion);
    w.string(state.model.config.to_text());
    w.string(state.loss.to_text());
    w.string(state.train.to_text());
    w.scalar<std::int64_t>(state.step);
    w.scalar<std::uint64_t>(state.seed);
    w.string(state.rng_state);
    const ParamList<float> params = state.model.parameters();
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& v = params[i].var.value();
        w.string(params[i].name);
        w.scalar<std::uint32_t>(static_cast<std::uint32_t>(v.channels()));
        w.scalar<std::uint32_t>(static_cast<std::uint32_t>(v.height()));
        w.scalar<std::uint32_t>(static_cast<std::uint32_t>(v.width()));
        w.floats(v);
        w.floats(state.adam_m[i]);
        w.floats(state.adam_v[i]);
    }
    const std::uint64_t checksum = fnv1a(w.buffer().data(), w.buffer().size());
    w.scalar<std::uint64_t>(checksum);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + tmp.string());
        out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
        if (!out) throw Error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kCheckpointMagic) + 4 + 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) {
        throw CheckpointVersionError("not a checkpoint file: " + path.string());
    }
    const std::size_t body = buf.size() - 8;
    Reader tail(buf, buf.size());
    {
        std::vector<char> skip(body);
        tail.bytes(skip.data(), body);
    }
    if (tail.scalar<std::uint64_t>() != fnv1a(buf.data(), body)) {
        throw CheckpointVersionError("checkpoint checksum mismatch (corrupted file): " + path.string());
    }

    Reader r(buf, body);
    char magic[8];
    r.bytes(magic, 8);
    const auto version = r.scalar<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                     std::to_string(kCheckpointVersion) + ")");
    }
    const ModelConfig model = ModelConfig::from(KeyValueConfig::from_text(r.string()));
    const LossConfig loss = LossConfig::from(KeyValueConfig::from_text(r.string()));
    const TrainConfig train = TrainConfig::from(KeyValueConfig::from_text(r.string()));

    TrainState s = init_state(model, train, loss);
    s.step = r.scalar<std::int64_t>();
    s.seed = r.scalar<std::uint64_t>();
    s.rng_state = r.string();
    ParamList<float> params = s.model.parameters();
    if (r.scalar<std::uint32_t>() != params.size()) throw CheckpointVersionError("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<float>& v = params[i].var.mutable_value();
        const std::string name = r.string();
        const auto c = r.scalar<std::uint32_t>(), h = r.scalar<std::uint32_t>(), w = r.scalar<std::uint32_t>();
        if (name != params[i].name || c != static_cast<std::uint32_t>(v.channels()) ||
            h != static_cast<std::uint32_t>(v.height()) || w != static_cast<std::uint32_t>(v.width())) {
            throw CheckpointVersionError("checkpoint record '" + name + "' does not match parameter '" +
                                         params[i].name + "'");
        }
        r.floats(v);
        r.floats(s.adam_m[i]);
        r.floats(s.adam_v[i]);
    }
    if (!r.done()) throw CheckpointVersionError("trailing bytes in checkpoint");
    return s;
}

TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    TrainState s = load_checkpoint(path);
    if (!(s.model.config == expected)) {
        throw ConfigError("checkpoint " + path.string() + " was written for a different model configuration:\n" +
                          s.model.config.to_text());
    }
    return s;
}

// ---------------------------------------------------------------------------

SampleSource::SampleSource(std::vector<ManifestEntry> entries, bool use_patches)
    : entries_(std::move(entries)), use_patches_(use_patches) {}

std::size_t SampleSource::size() const {
    const std::size_t per_pair = use_patches_ ? kCropOffsets.size() * kCropOffsets.size() : 1;
    return entries_.size() * per_pair;
}

ImagePair SampleSource::get(std::size_t index) const {
    if (!use_patches_) return load_pair(entries_.at(index).mri, entries_.at(index).functional);
    const std::size_t per_pair = kCropOffsets.size() * kCropOffsets.size();
    const auto& e = entries_.at(index / per_pair);
    PatchSet set = crop_augment(load_pair(e.mri, e.functional));
    return std::move(set.patches.at(index % per_pair));
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 engine = epoch_engine(seed, epoch);
    std::shuffle(order.begin(), order.end(), engine);
    return order;
}

namespace {

constexpr const char* kLogHeader = "step\tepoch\tpair\talpha1\talpha2\tbeta1\tbeta2\tssim_term\trmi_term\ttotal";

// Keeps the header and rows up to `step`, so a resumed run continues the trace
// without duplicated or skipped step numbers.
void truncate_log(const std::filesystem::path& log, std::int64_t step) {
    std::vector<std::string> kept;
    {
        std::ifstream in(log);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line.rfind("step\t", 0) == 0) continue;
            const auto tab = line.find('\t');
            if (std::stoll(line.substr(0, tab)) <= step) kept.push_back(line);
        }
    }
    std::ofstream out(log, std::ios::trunc);
    out << kLogHeader << '\n';
    for (const auto& l : kept) out << l << '\n';
}

}  // namespace

TrainState train(const ModelConfig& model, const TrainConfig& config, const LossConfig& loss,
                 const std::filesystem::path& out_dir, const TrainCallbacks& callbacks) {
    config.validate();
    if (config.manifest_path.empty()) throw ConfigError("train.manifest_path is not set");
    SampleSource samples(read_manifest(config.manifest_path), config.use_patches);
    if (samples.size() == 0) throw ConfigError("manifest is empty: " + config.manifest_path);
    std::filesystem::create_directories(out_dir);

    const auto latest = out_dir / kLatestCheckpoint;
    const auto log_path = out_dir / kLossLog;
    TrainState state;
    if (std::filesystem::exists(latest)) {
        state = load_checkpoint(latest, model);
        if (state.seed != config.seed) throw ConfigError("train.seed differs from the checkpoint being resumed");
        state.train = config;
        state.loss = loss;
        truncate_log(log_path, state.step);
    } else {
        state = init_state(model, config, loss);
        std::ofstream(log_path, std::ios::trunc) << kLogHeader << '\n';
    }

    std::ofstream log(log_path, std::ios::app);
    log << std::setprecision(9);
    const auto per_epoch = static_cast<std::int64_t>(samples.size());
    const std::int64_t total = static_cast<std::int64_t>(config.epochs) * per_epoch;
    const std::int64_t stop = config.max_steps > 0 ? std::min(total, config.max_steps) : total;

    int cached_epoch = -1;
    std::vector<std::size_t> order;
    while (state.step < stop) {
        const int epoch = static_cast<int>(state.step / per_epoch);
        if (epoch != cached_epoch) {
            order = epoch_order(state.seed, epoch, samples.size());
            state.rng_state = engine_state(epoch_engine(state.seed, epoch));
            cached_epoch = epoch;
        }
        const ImagePair sample = samples.get(order[static_cast<std::size_t>(state.step % per_epoch)]);
        StepRecord rec = train_step(state, sample);
        rec.epoch = epoch;
        if (rec.degenerate && callbacks.on_warning) {
            callbacks.on_warning("degenerate sample (all loss weights zero) skipped: " + rec.pair_id);
        }
        log << rec.step << '\t' << rec.epoch << '\t' << rec.pair_id << '\t' << rec.weights.alpha1 << '\t'
            << rec.weights.alpha2 << '\t' << rec.weights.beta1 << '\t' << rec.weights.beta2 << '\t' << rec.ssim_term
            << '\t' << rec.rmi_term << '\t' << rec.total << '\n';
        log.flush();
        if (callbacks.on_step) callbacks.on_step(rec);
        if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) save_checkpoint(state, latest);
    }
    save_checkpoint(state, latest);
    save_checkpoint(state, out_dir / kFinalCheckpoint);
    return state;
}

}  // namespace amin
