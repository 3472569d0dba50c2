#include "amin/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "amin/errors.hpp"

namespace amin {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
    N value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) throw ConfigError("invalid value for " + key + ": '" + text + "'");
    return value;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

template <typename N>
void read_into(const KeyValueConfig& kv, const std::string& key, N& out) {
    if (auto v = kv.get(key)) out = parse_number<N>(key, *v);
}

void read_bool(const KeyValueConfig& kv, const std::string& key, bool& out) {
    if (auto v = kv.get(key)) {
        try {
            out = parse_bool(*v);
        } catch (const ConfigError&) {
            throw ConfigError("invalid boolean for " + key + ": '" + *v + "'");
        }
    }
}

}  // namespace

bool parse_bool(const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError("invalid boolean '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_number<int>("list", item));
    }
    return out;
}

KeyValueConfig KeyValueConfig::from_text(const std::string& text) {
    KeyValueConfig kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.find('=') == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        kv.set_assignment(line);
    }
    return kv;
}

KeyValueConfig KeyValueConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

void KeyValueConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: '" + assignment + "'");
    const std::string key = trim(assignment.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key in '" + assignment + "'");
    values_[key] = trim(assignment.substr(eq + 1));
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> KeyValueConfig::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    }
    return out;
}

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (idb_count < 0 || idb_count > 6) fail("idb_count must be in 0..6");
    if (tmu_count < 0 || tmu_count > 3) fail("tmu_count must be in 0..3");
    if (branch_kernels.size() != 3) fail("branch_kernels needs exactly three kernel sizes");
    for (int k : branch_kernels) {
        if (k < 1 || k % 2 == 0) fail("branch kernels must be odd and positive");
    }
    if (channels < 2 || channels % 2 != 0) fail("channels must be even and >= 2");
    if (growth < 1) fail("growth must be positive");
    if (patch < 1) fail("patch must be positive");
    if (embed_dim < 1 || embed_dim % (patch * patch) != 0) fail("embed_dim must be a multiple of patch^2");
    if (heads < 1 || embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
    if (mlp_ratio < 1) fail("mlp_ratio must be positive");
    if (reduction < 1) fail("reduction must be positive");
    if (branch_width < 1 || comp_width < 1) fail("branch_width and comp_width must be positive");
    if (!(clamp > 0.0)) fail("clamp must be positive");
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "model.idb_count=" << idb_count << '\n'
       << "model.tmu_count=" << tmu_count << '\n'
       << "model.branch_kernels=" << branch_kernels[0];
    for (std::size_t i = 1; i < branch_kernels.size(); ++i) os << ',' << branch_kernels[i];
    os << '\n'
       << "model.use_cbam=" << (use_cbam ? "true" : "false") << '\n'
       << "model.channels=" << channels << '\n'
       << "model.growth=" << growth << '\n'
       << "model.separate_st_nets=" << (separate_st_nets ? "true" : "false") << '\n'
       << "model.embed_dim=" << embed_dim << '\n'
       << "model.patch=" << patch << '\n'
       << "model.heads=" << heads << '\n'
       << "model.mlp_ratio=" << mlp_ratio << '\n'
       << "model.reduction=" << reduction << '\n'
       << "model.branch_width=" << branch_width << '\n'
       << "model.comp_width=" << comp_width << '\n'
       << "model.clamp=" << format_double(clamp) << '\n'
       << "model.leaky_slope=" << format_double(leaky_slope) << '\n'
       << "model.seed=" << seed << '\n';
    return os.str();
}

ModelConfig ModelConfig::from(const KeyValueConfig& kv) {
    ModelConfig c;
    read_into(kv, "model.idb_count", c.idb_count);
    read_into(kv, "model.tmu_count", c.tmu_count);
    if (auto v = kv.get("model.branch_kernels")) c.branch_kernels = parse_int_list(*v);
    read_bool(kv, "model.use_cbam", c.use_cbam);
    read_into(kv, "model.channels", c.channels);
    read_into(kv, "model.growth", c.growth);
    read_bool(kv, "model.separate_st_nets", c.separate_st_nets);
    read_into(kv, "model.embed_dim", c.embed_dim);
    read_into(kv, "model.patch", c.patch);
    read_into(kv, "model.heads", c.heads);
    read_into(kv, "model.mlp_ratio", c.mlp_ratio);
    read_into(kv, "model.reduction", c.reduction);
    read_into(kv, "model.branch_width", c.branch_width);
    read_into(kv, "model.comp_width", c.comp_width);
    read_into(kv, "model.clamp", c.clamp);
    read_into(kv, "model.leaky_slope", c.leaky_slope);
    read_into(kv, "model.seed", c.seed);
    c.validate();
    return c;
}

std::string LossConfig::to_text() const {
    std::ostringstream os;
    os << "loss.normalize_weights=" << (normalize_weights ? "true" : "false") << '\n';
    os << "loss.fixed_weights=";
    if (fixed_weights) {
        for (std::size_t i = 0; i < 4; ++i) os << (i ? "," : "") << format_double((*fixed_weights)[i]);
    } else {
        os << "adaptive";
    }
    os << '\n';
    return os.str();
}

LossConfig LossConfig::from(const KeyValueConfig& kv) {
    LossConfig c;
    read_bool(kv, "loss.normalize_weights", c.normalize_weights);
    if (auto v = kv.get("loss.fixed_weights"); v && *v != "adaptive" && !v->empty()) {
        std::array<double, 4> w{};
        std::stringstream ss(*v);
        std::string item;
        std::size_t n = 0;
        while (std::getline(ss, item, ',')) {
            if (n >= 4) throw ConfigError("loss.fixed_weights needs exactly four values");
            w[n] = parse_number<double>("loss.fixed_weights", trim(item));
            if (w[n] < 0) throw ConfigError("loss.fixed_weights must be non-negative");
            ++n;
        }
        if (n != 4) throw ConfigError("loss.fixed_weights needs exactly four values");
        c.fixed_weights = w;
    }
    return c;
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
    if (batch_size != 1) throw ConfigError("train.batch_size: only 1 is supported");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (checkpoint_every < 0 || max_steps < 0) throw ConfigError("train step counts must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
}

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os << "train.learning_rate=" << format_double(learning_rate) << '\n'
       << "train.batch_size=" << batch_size << '\n'
       << "train.epochs=" << epochs << '\n'
       << "train.adam_beta1=" << format_double(adam_beta1) << '\n'
       << "train.adam_beta2=" << format_double(adam_beta2) << '\n'
       << "train.adam_eps=" << format_double(adam_eps) << '\n'
       << "train.seed=" << seed << '\n'
       << "train.checkpoint_every=" << checkpoint_every << '\n'
       << "train.max_steps=" << max_steps << '\n'
       << "train.use_patches=" << (use_patches ? "true" : "false") << '\n'
       << "train.grad_clip=" << format_double(grad_clip) << '\n'
       << "train.manifest_path=" << manifest_path << '\n';
    return os.str();
}

TrainConfig TrainConfig::from(const KeyValueConfig& kv) {
    TrainConfig c;
    read_into(kv, "train.learning_rate", c.learning_rate);
    read_into(kv, "train.batch_size", c.batch_size);
    read_into(kv, "train.epochs", c.epochs);
    read_into(kv, "train.adam_beta1", c.adam_beta1);
    read_into(kv, "train.adam_beta2", c.adam_beta2);
    read_into(kv, "train.adam_eps", c.adam_eps);
    read_into(kv, "train.seed", c.seed);
    read_into(kv, "train.checkpoint_every", c.checkpoint_every);
    read_into(kv, "train.max_steps", c.max_steps);
    read_bool(kv, "train.use_patches", c.use_patches);
    read_into(kv, "train.grad_clip", c.grad_clip);
    if (auto v = kv.get("train.manifest_path")) c.manifest_path = *v;
    c.validate();
    return c;
}

AblateConfig AblateConfig::from(const KeyValueConfig& kv) {
    AblateConfig c;
    read_into(kv, "ablate.epochs", c.epochs);
    read_into(kv, "ablate.max_steps", c.max_steps);
    read_into(kv, "ablate.max_pairs", c.max_pairs);
    if (c.epochs < 1 || c.max_steps < 0 || c.max_pairs < 1) throw ConfigError("invalid ablate budget");
    return c;
}

std::string AblateConfig::to_text() const {
    std::ostringstream os;
    os << "ablate.epochs=" << epochs << '\n' << "ablate.max_steps=" << max_steps << '\n'
       << "ablate.max_pairs=" << max_pairs << '\n';
    return os.str();
}

}  // namespace amin
