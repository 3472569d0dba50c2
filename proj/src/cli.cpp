#include "amin/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "amin/trainer.hpp"

namespace amin {

namespace fs = std::filesystem;

std::string ResolvedConfig::to_text() const {
    return model.to_text() + loss.to_text() + train.to_text() + ablate.to_text();
}

namespace {

std::set<std::string> known_keys() {
    std::set<std::string> keys;
    const ResolvedConfig defaults;
    std::istringstream in(defaults.to_text());
    std::string line;
    while (std::getline(in, line)) keys.insert(line.substr(0, line.find('=')));
    return keys;
}

}  // namespace

ResolvedConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::from_file(config_path);
    for (const auto& o : overrides) kv.set_assignment(o);
    const auto keys = known_keys();
    for (const auto& [k, v] : kv.values()) {
        if (!keys.count(k)) throw ConfigError("unknown configuration key '" + k + "'");
    }
    ResolvedConfig r;
    r.model = ModelConfig::from(kv);
    r.model.validate();
    r.loss = LossConfig::from(kv);
    r.train = TrainConfig::from(kv);
    r.ablate = AblateConfig::from(kv);
    return r;
}

// ---------------------------------------------------------------------------
// Ablation grid

void AblationVariant::apply(ModelConfig& model, LossConfig& loss) const {
    if (idb_count) model.idb_count = *idb_count;
    if (tmu_count) model.tmu_count = *tmu_count;
    if (use_cbam) model.use_cbam = *use_cbam;
    if (branch_kernels) model.branch_kernels = *branch_kernels;
    if (adaptive) loss.fixed_weights.reset();
    if (fixed_weights) loss.fixed_weights = fixed_weights;
}

namespace {

std::string format_weight(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

AblationVariant weight_variant(const std::array<double, 4>& w) {
    AblationVariant v;
    v.name = "W_" + format_weight(w[0]) + "_" + format_weight(w[1]) + "_" + format_weight(w[2]) + "_" +
             format_weight(w[3]);
    v.fixed_weights = w;
    return v;
}

int parse_suffix(const std::string& name, const std::string& prefix, int lo, int hi) {
    const std::string digits = name.substr(prefix.size());
    int value = -1;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size() || value < lo || value > hi) {
        throw ConfigError("invalid ablation variant '" + name + "'");
    }
    return value;
}

AblationVariant parse_variant(const std::string& name) {
    AblationVariant v;
    v.name = name;
    if (name == "full") return v;
    if (name == "adaptive") {
        v.adaptive = true;
        return v;
    }
    if (name.rfind("IDB_", 0) == 0) {
        v.idb_count = parse_suffix(name, "IDB_", 0, 6);
        return v;
    }
    if (name.rfind("TMU_", 0) == 0) {
        v.tmu_count = parse_suffix(name, "TMU_", 0, 3);
        return v;
    }
    if (name.rfind("CBAM_", 0) == 0) {
        v.use_cbam = parse_suffix(name, "CBAM_", 0, 1) == 1;
        return v;
    }
    if (name == "all3x3" || name == "all5x5" || name == "all7x7") {
        const int k = name[3] - '0';
        v.branch_kernels = std::vector<int>{k, k, k};
        return v;
    }
    if (name == "mixed") {
        v.branch_kernels = std::vector<int>{3, 5, 7};
        return v;
    }
    if (name.rfind("W_", 0) == 0) {
        std::array<double, 4> w{};
        std::stringstream ss(name.substr(2));
        std::string part;
        int n = 0;
        while (std::getline(ss, part, '_')) {
            if (n >= 4) throw ConfigError("invalid ablation variant '" + name + "'");
            auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), w[n]);
            if (part.empty() || ec != std::errc() || ptr != part.data() + part.size() || w[n] < 0) {
                throw ConfigError("invalid ablation variant '" + name + "'");
            }
            ++n;
        }
        if (n != 4) throw ConfigError("invalid ablation variant '" + name + "'");
        AblationVariant out = weight_variant(w);
        out.name = name;
        return out;
    }
    throw ConfigError("unknown ablation variant '" + name + "'");
}

std::vector<AblationVariant> structural_preset() {
    std::vector<AblationVariant> out;
    for (int k = 0; k <= 5; ++k) out.push_back(parse_variant("IDB_" + std::to_string(k)));
    for (int k = 0; k <= 2; ++k) out.push_back(parse_variant("TMU_" + std::to_string(k)));
    for (const char* n : {"CBAM_0", "all3x3", "all5x5", "all7x7", "full"}) out.push_back(parse_variant(n));
    return out;
}

std::vector<AblationVariant> weights_preset() {
    std::vector<AblationVariant> out;
    for (const auto& w : kWeightGrid) out.push_back(weight_variant(w));
    out.push_back(parse_variant("adaptive"));
    return out;
}

}  // namespace

std::vector<AblationVariant> parse_grid(const std::string& grid) {
    std::vector<AblationVariant> out;
    std::set<std::string> seen;
    auto add = [&](AblationVariant v) {
        if (seen.insert(v.name).second) out.push_back(std::move(v));
    };
    std::stringstream ss(grid);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        if (item == "structural" || item == "all") {
            for (auto& v : structural_preset()) add(std::move(v));
        }
        if (item == "weights" || item == "all") {
            for (auto& v : weights_preset()) add(std::move(v));
        }
        if (item != "structural" && item != "weights" && item != "all") add(parse_variant(item));
    }
    if (out.empty()) throw ConfigError("ablation grid is empty");
    return out;
}

std::vector<RankRow> rank_variants(const std::vector<MetricReport>& means) {
    std::vector<RankRow> rows(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) rows[i].variant = means[i].pair_id;
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
        for (std::size_t i = 0; i < means.size(); ++i) {
            const double mine = means[i].values()[m];
            int better = 0;
            for (std::size_t j = 0; j < means.size(); ++j) {
                if (means[j].values()[m] > mine) ++better;
            }
            rows[i].ranks[m] = better + 1;
            rows[i].rank_sum += better + 1;
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const RankRow& a, const RankRow& b) {
        return a.rank_sum != b.rank_sum ? a.rank_sum < b.rank_sum : a.variant < b.variant;
    });
    return rows;
}

void write_rank_table(std::ostream& out, const std::vector<RankRow>& rows) {
    out << "variant";
    for (const char* name : kMetricNames) out << '\t' << name;
    out << "\trank_sum\n";
    for (const auto& r : rows) {
        out << r.variant;
        for (int rank : r.ranks) out << '\t' << rank;
        out << '\t' << r.rank_sum << '\n';
    }
}

// ---------------------------------------------------------------------------
// Commands

namespace {

void echo_config(std::ostream& out, const std::string& command, const ResolvedConfig& cfg) {
    out << "# amin " << command << " resolved configuration\n" << cfg.to_text();
    out << "# seed model=" << cfg.model.seed << " train=" << cfg.train.seed << '\n';
}

void write_fused(const fs::path& path, const FusedImage& fused) {
    if (fused.rgb) {
        write_rgb_png(path, *fused.rgb);
    } else {
        write_gray_png(path, fused.y);
    }
}

std::vector<MetricReport> evaluate_with_model(const ModelParams<float>& model, const std::vector<ManifestEntry>& entries,
                                              std::ostream& out) {
    std::vector<MetricReport> rows;
    for (const auto& e : entries) {
        const ImagePair pair = load_pair(e.mri, e.functional);
        const GrayImage fused = forward(model, pair.mri, pair.functional_y);
        rows.push_back(evaluate(fused, pair.mri, pair.functional_y, e.identifier));
        out << "evaluated " << e.identifier << '\n';
    }
    return rows;
}

std::vector<MetricReport> evaluate_fused_dir(const fs::path& dir, const std::vector<ManifestEntry>& entries,
                                             std::ostream& out) {
    std::vector<MetricReport> rows;
    for (const auto& e : entries) {
        const ImagePair pair = load_pair(e.mri, e.functional);
        const fs::path fused_path = dir / (e.identifier + ".png");
        const DecodedImage fused = read_image(fused_path);
        if (!fused.gray.same_shape(pair.mri)) {
            throw PairDimensionError("fused image " + fused_path.string() + " does not match its sources");
        }
        rows.push_back(evaluate(fused.gray, pair.mri, pair.functional_y, e.identifier));
        out << "evaluated " << e.identifier << '\n';
    }
    return rows;
}

void write_table_file(const fs::path& path, const std::vector<MetricReport>& rows) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    write_metric_table(f, rows);
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    for (const auto& e : entries) f << fs::absolute(e.mri).string() << '\t' << fs::absolute(e.functional).string() << '\n';
}

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", opts.overrides, "override a configuration key (key=value), repeatable");
}

int cmd_train(const CommonOptions& common, const std::string& manifest, const std::string& out_dir,
              std::optional<int> epochs, std::ostream& out, std::ostream& err) {
    std::vector<std::string> overrides = common.overrides;
    overrides.push_back("train.manifest_path=" + manifest);
    if (epochs) overrides.push_back("train.epochs=" + std::to_string(*epochs));
    const ResolvedConfig cfg = resolve_config(common.config_path, overrides);
    echo_config(out, "train", cfg);
    TrainCallbacks cb;
    cb.on_step = [&out](const StepRecord& r) {
        out << "step " << r.step << " epoch " << r.epoch << " total " << r.total << " ssim " << r.ssim_term << " rmi "
            << r.rmi_term << '\n';
    };
    cb.on_warning = [&err](const std::string& w) { err << "warning: " << w << '\n'; };
    const TrainState state = train(cfg.model, cfg.train, cfg.loss, out_dir, cb);
    out << "finished at step " << state.step << "; checkpoint " << (fs::path(out_dir) / kFinalCheckpoint).string()
        << '\n';
    return kExitOk;
}

int cmd_fuse(const std::string& checkpoint, const std::string& mri, const std::string& functional,
             const std::string& out_path, std::ostream& out) {
    const TrainState state = load_checkpoint(checkpoint);
    ResolvedConfig cfg;
    cfg.model = state.model.config;
    cfg.loss = state.loss;
    cfg.train = state.train;
    echo_config(out, "fuse", cfg);
    const ImagePair pair = load_pair(mri, functional);
    const FusedImage fused = fuse_full(state.model, pair);
    write_fused(out_path, fused);
    out << "wrote " << out_path << " (" << fused.y.width << "x" << fused.y.height << (fused.rgb ? ", rgb" : ", gray")
        << ")\n";
    return kExitOk;
}

int cmd_eval(const std::string& fused_dir, const std::string& checkpoint, const std::string& manifest,
             const std::string& out_path, std::ostream& out) {
    const auto entries = read_manifest(manifest);
    if (entries.empty()) throw ConfigError("manifest is empty: " + manifest);
    std::vector<MetricReport> rows;
    if (!checkpoint.empty()) {
        const TrainState state = load_checkpoint(checkpoint);
        ResolvedConfig cfg;
        cfg.model = state.model.config;
        cfg.loss = state.loss;
        cfg.train = state.train;
        echo_config(out, "eval", cfg);
        rows = evaluate_with_model(state.model, entries, out);
    } else {
        out << "# amin eval fused-dir=" << fused_dir << " (no model configuration)\n";
        rows = evaluate_fused_dir(fused_dir, entries, out);
    }
    rows.push_back(average_reports(rows));
    write_table_file(out_path, rows);
    out << "wrote " << out_path << " (" << rows.size() - 1 << " pairs + mean)\n";
    return kExitOk;
}

int cmd_ablate(const CommonOptions& common, const std::string& grid, const std::string& manifest,
               const std::string& out_dir, std::ostream& out, std::ostream& err) {
    const std::vector<AblationVariant> variants = parse_grid(grid);
    ResolvedConfig base = resolve_config(common.config_path, common.overrides);
    auto entries = read_manifest(manifest);
    if (entries.empty()) throw ConfigError("manifest is empty: " + manifest);
    if (base.ablate.max_pairs > 0 && entries.size() > static_cast<std::size_t>(base.ablate.max_pairs)) {
        entries.resize(static_cast<std::size_t>(base.ablate.max_pairs));
    }
    base.train.epochs = base.ablate.epochs;
    base.train.max_steps = base.ablate.max_steps;
    fs::create_directories(out_dir);
    const fs::path subset = fs::path(out_dir) / "manifest.tsv";
    write_manifest(subset, entries);
    base.train.manifest_path = fs::absolute(subset).string();
    echo_config(out, "ablate", base);
    out << "# grid";
    for (const auto& v : variants) out << ' ' << v.name;
    out << '\n';

    std::vector<MetricReport> means;
    for (const auto& v : variants) {
        ResolvedConfig cfg = base;
        v.apply(cfg.model, cfg.loss);
        cfg.model.validate();
        const fs::path dir = fs::path(out_dir) / v.name;
        out << "== variant " << v.name << '\n';
        {
            std::ofstream(dir.parent_path() / (v.name + ".config")) << cfg.to_text();
        }
        TrainCallbacks cb;
        cb.on_warning = [&err, &v](const std::string& w) { err << "warning [" << v.name << "]: " << w << '\n'; };
        const TrainState state = train(cfg.model, cfg.train, cfg.loss, dir, cb);
        std::vector<MetricReport> rows = evaluate_with_model(state.model, entries, out);
        MetricReport mean = average_reports(rows);
        rows.push_back(mean);
        write_table_file(dir / "metrics.tsv", rows);
        mean.pair_id = v.name;
        means.push_back(mean);
        out << "   steps " << state.step << " mean QABF " << mean.qabf << '\n';
    }
    write_table_file(fs::path(out_dir) / "summary.tsv", means);
    const auto ranks = rank_variants(means);
    std::ofstream rank_file(fs::path(out_dir) / "ranking.tsv");
    write_rank_table(rank_file, ranks);
    out << "wrote " << (fs::path(out_dir) / "ranking.tsv").string() << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MMIF-AMIN multimodal medical image fusion", "amin"};
    app.require_subcommand(1);

    CommonOptions train_common, ablate_common;
    std::string manifest, out_dir, checkpoint, mri, functional, out_path, fused_dir, grid;
    std::optional<int> epochs;

    auto* train_cmd = app.add_subcommand("train", "train a fusion model");
    add_common(train_cmd, train_common);
    train_cmd->add_option("--manifest", manifest, "TAB-separated list of <mri> <functional> pairs")
        ->required()
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--out-dir", out_dir, "directory for checkpoints and the loss log")->required();
    train_cmd->add_option("--epochs", epochs, "shortcut for --set train.epochs=N");

    auto* fuse_cmd = app.add_subcommand("fuse", "fuse one image pair");
    fuse_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    fuse_cmd->add_option("--mri", mri, "anatomical image")->required();
    fuse_cmd->add_option("--functional", functional, "functional image (gray or RGB)")->required();
    fuse_cmd->add_option("--out", out_path, "output PNG")->required();

    auto* eval_cmd = app.add_subcommand("eval", "compute fusion metrics over a manifest");
    auto* fused_opt = eval_cmd->add_option("--fused-dir", fused_dir, "directory holding <mri stem>.png results");
    auto* ckpt_opt = eval_cmd->add_option("--checkpoint", checkpoint, "fuse with this checkpoint instead");
    fused_opt->excludes(ckpt_opt);
    eval_cmd->add_option("--manifest", manifest, "pairs to evaluate")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", out_path, "output TSV")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate an ablation grid");
    add_common(ablate_cmd, ablate_common);
    ablate_cmd->add_option("--grid", grid, "comma-separated variants or presets (structural, weights, all)")->required();
    ablate_cmd->add_option("--manifest", manifest, "training and evaluation pairs")->required()->check(CLI::ExistingFile);
    ablate_cmd->add_option("--out-dir", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        const CLI::App* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << failing->help();
        return kExitUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_common, manifest, out_dir, epochs, out, err);
        if (fuse_cmd->parsed()) return cmd_fuse(checkpoint, mri, functional, out_path, out);
        if (eval_cmd->parsed()) {
            if (fused_dir.empty() && checkpoint.empty()) {
                throw ConfigError("eval needs --fused-dir or --checkpoint");
            }
            return cmd_eval(fused_dir, checkpoint, manifest, out_path, out);
        }
        if (ablate_cmd->parsed()) return cmd_ablate(ablate_common, grid, manifest, out_dir, out, err);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericsError& e) {
        err << "numerics error: " << e.what() << '\n';
        return kExitNumerics;
    } catch (const Error& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace amin
