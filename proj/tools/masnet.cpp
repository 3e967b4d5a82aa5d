// Command-line front end: synthetic data generation, training, evaluation,
// cross-validation, variant comparison, and attention-map export.

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "masnet/eval.hpp"

namespace fs = std::filesystem;
using namespace masnet;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key = value option set. Every option has a documented default; a
// config file ("key = value", # comments) is applied first and command-line
// flags override it. Unknown keys are hard usage errors.
class Options {
public:
    void define(const std::string& key, const std::string& default_value, const std::string& help) {
        order_.push_back(key);
        values_[key] = default_value;
        help_[key] = help;
    }

    void set(const std::string& key, const std::string& value, const std::string& source) {
        auto it = values_.find(key);
        if (it == values_.end()) throw UsageError("unknown option '" + source + "'");
        it->second = value;
    }

    void load_config(const fs::path& path) {
        std::ifstream is(path);
        if (!is) throw UsageError("cannot open config file '" + path.string() + "'");
        std::string line;
        while (std::getline(is, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    throw UsageError("malformed config line '" + line + "'");
                continue;
            }
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), trim(line.substr(0, eq)));
        }
    }

    // --config files first (in order), then the remaining flags in order.
    void parse(const std::vector<std::string>& args) {
        std::vector<std::pair<std::string, std::string>> flags;
        for (std::size_t i = 0; i < args.size(); ++i) {
            const std::string& a = args[i];
            if (a == "--help") {
                print_help(std::cout);
                std::exit(0);
            }
            if (a.rfind("--", 0) != 0) throw UsageError("expected a --flag, got '" + a + "'");
            if (i + 1 >= args.size()) throw UsageError("flag '" + a + "' needs a value");
            const std::string key = a.substr(2);
            const std::string value = args[++i];
            if (key == "config") load_config(value);
            else flags.emplace_back(key, value);
        }
        for (const auto& [k, v] : flags) set(k, v, "--" + k);
    }

    const std::string& str(const std::string& key) const { return values_.at(key); }

    long integer(const std::string& key) const {
        try {
            std::size_t pos = 0;
            long v = std::stol(str(key), &pos);
            if (pos != str(key).size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw UsageError("option '" + key + "' expects an integer, got '" + str(key) + "'");
        }
    }

    double real(const std::string& key) const {
        try {
            std::size_t pos = 0;
            double v = std::stod(str(key), &pos);
            if (pos != str(key).size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw UsageError("option '" + key + "' expects a number, got '" + str(key) + "'");
        }
    }

    bool flag(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw UsageError("option '" + key + "' expects true/false, got '" + v + "'");
    }

    std::vector<std::size_t> size_list(const std::string& key) const {
        std::vector<std::size_t> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                out.push_back(std::size_t(std::stoul(item)));
            } catch (...) {
                throw UsageError("option '" + key + "' expects a comma-separated list, got '" + str(key) + "'");
            }
        }
        return out;
    }

    // Resolved config, reusable via --config.
    void echo(const fs::path& path) const {
        fs::create_directories(path.parent_path());
        std::ofstream os(path);
        for (const auto& k : order_) os << k << " = " << values_.at(k) << "\n";
    }

    void print_help(std::ostream& os) const {
        os << "options:\n";
        for (const auto& k : order_)
            os << "  --" << k << " (default: " << (values_.at(k).empty() ? "<none>" : values_.at(k))
               << ")  " << help_.at(k) << "\n";
        os << "  --config FILE  key = value file applied before flags\n";
    }

private:
    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> help_;
};

void define_model_options(Options& o, bool with_variant = true) {
    if (with_variant) o.define("variant", "vanilla", "vanilla | masnet | early");
    o.define("stages", "2", "number of encoder stages");
    o.define("channels", "8,16", "per-stage channel widths");
    o.define("attn-stages", "1,1", "per-stage mutual-attention enable (0/1)");
    o.define("level", "individual", "attention level: global | local | individual");
    o.define("window", "2", "local attention window (square)");
    o.define("d", "0", "projection width; 0 matches the stage channels");
    o.define("individual-literal", "false", "use the literal single-token individual level");
    o.define("fusion", "stack", "fusion: stack | add | diff");
    o.define("skips", "false", "fuse and skip-connect every stage in the decoder");
}

ModelConfig model_config(const Options& o, const std::string& variant_override = "") {
    ModelConfig cfg;
    const std::string variant = variant_override.empty() ? o.str("variant") : variant_override;
    if (variant == "vanilla") cfg.variant = Variant::VanillaSiamese;
    else if (variant == "masnet") cfg.variant = Variant::MASNet;
    else if (variant == "early") cfg.variant = Variant::EarlyFusion;
    else throw UsageError("unknown variant '" + variant + "'");
    cfg.n_stages = std::size_t(o.integer("stages"));
    cfg.stage_channels = o.size_list("channels");
    cfg.attention_stage.clear();
    for (std::size_t v : o.size_list("attn-stages")) cfg.attention_stage.push_back(std::uint8_t(v));
    const std::string level = o.str("level");
    if (level == "global") cfg.level = AttentionLevel::Global;
    else if (level == "local") cfg.level = AttentionLevel::Local;
    else if (level == "individual") cfg.level = AttentionLevel::Individual;
    else throw UsageError("unknown level '" + level + "'");
    cfg.window_h = cfg.window_w = std::size_t(o.integer("window"));
    cfg.proj_dim = std::size_t(o.integer("d"));
    cfg.individual_literal = o.flag("individual-literal");
    const std::string fusion = o.str("fusion");
    if (fusion == "stack") cfg.fusion = FusionKind::StackPointwise;
    else if (fusion == "add") cfg.fusion = FusionKind::Add;
    else if (fusion == "diff") cfg.fusion = FusionKind::Diff;
    else throw UsageError("unknown fusion '" + fusion + "'");
    cfg.decoder_skips = o.flag("skips");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

void define_train_options(Options& o) {
    o.define("lr", "6e-5", "initial learning rate");
    o.define("wd", "0.01", "weight decay");
    o.define("iters", "2000", "max iterations");
    o.define("warmup", "150", "warmup iterations");
    o.define("power", "1.0", "poly schedule power");
    o.define("batch", "4", "batch size");
    o.define("crop", "64", "training crop size");
    o.define("ckpt-every", "500", "checkpoint/validation cadence");
}

TrainConfig train_config(const Options& o) {
    TrainConfig cfg;
    cfg.base_lr = o.real("lr");
    cfg.weight_decay = o.real("wd");
    cfg.max_iters = std::size_t(o.integer("iters"));
    cfg.warmup_iters = std::size_t(o.integer("warmup"));
    cfg.poly_power = o.real("power");
    cfg.batch_size = std::size_t(o.integer("batch"));
    cfg.crop_size = std::size_t(o.integer("crop"));
    cfg.checkpoint_every = std::size_t(o.integer("ckpt-every"));
    cfg.seed = std::uint64_t(o.integer("seed"));
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

std::vector<Sample> generate_corpus(const SynthConfig& proto, std::size_t pairs, std::uint64_t seed) {
    std::vector<Sample> out;
    Rng data_rng = Rng(seed).split("data");
    for (std::size_t i = 0; i < pairs; ++i) {
        char name[24];
        std::snprintf(name, sizeof(name), "pair_%04zu", i);
        auto [pair, mask] = generate_pair(proto, data_rng, name);
        out.push_back({std::move(pair), std::move(mask)});
    }
    return out;
}

int cmd_gen_data(const std::vector<std::string>& args) {
    Options o;
    o.define("out", "", "output dataset directory (A/, B/, label/)");
    o.define("pairs", "20", "number of pairs to generate");
    o.define("size", "64", "image extent");
    o.define("persistent", "6", "persistent shapes per scene");
    o.define("changes", "3", "change shapes per scene");
    o.define("jitter", "0.12", "photometric jitter amplitude");
    o.define("noise", "0.02", "per-pixel noise amplitude");
    o.define("seed", "1", "root seed");
    o.parse(args);
    if (o.str("out").empty()) throw UsageError("gen-data requires --out");

    SynthConfig cfg;
    cfg.size = std::size_t(o.integer("size"));
    cfg.persistent_shapes = std::size_t(o.integer("persistent"));
    cfg.change_shapes = std::size_t(o.integer("changes"));
    cfg.jitter = float(o.real("jitter"));
    cfg.noise = float(o.real("noise"));
    cfg.seed = std::uint64_t(o.integer("seed"));
    cfg.validate();

    auto samples = generate_corpus(cfg, std::size_t(o.integer("pairs")), cfg.seed);
    write_dataset(o.str("out"), samples);
    o.echo(fs::path(o.str("out")) / "config.txt");
    std::cout << "wrote " << samples.size() << " pairs to " << o.str("out") << "\n";
    return 0;
}

int cmd_train(const std::vector<std::string>& args) {
    Options o;
    o.define("data", "", "training dataset directory");
    o.define("val", "", "validation dataset directory (defaults to the training set)");
    o.define("out", "", "run output directory");
    o.define("seed", "1", "root seed");
    define_model_options(o);
    define_train_options(o);
    o.parse(args);
    if (o.str("data").empty() || o.str("out").empty()) throw UsageError("train requires --data and --out");

    ModelConfig mc = model_config(o);
    TrainConfig tc = train_config(o);
    auto train_set = load_dataset(o.str("data"));
    std::vector<Sample> val_set;
    if (!o.str("val").empty()) val_set = load_dataset(o.str("val"));

    const fs::path out = o.str("out");
    o.echo(out / "config.txt");
    TrainResult res = train(mc, train_set, val_set, tc, out);
    fs::create_directories(out / "reports");
    MetricReport rep = evaluate(res.best_checkpoint, val_set.empty() ? train_set : val_set);
    write_report(out / "reports" / "validation.txt", rep);
    std::cout << "final loss " << res.final_loss << ", best validation iou " << rep.iou << "\n";
    std::cout << "best checkpoint: " << res.best_checkpoint.string() << "\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& args) {
    Options o;
    o.define("ckpt", "", "checkpoint file");
    o.define("data", "", "dataset directory");
    o.define("out", "", "report output directory");
    o.define("seed", "1", "unused; accepted for config compatibility");
    o.parse(args);
    if (o.str("ckpt").empty() || o.str("data").empty() || o.str("out").empty())
        throw UsageError("eval requires --ckpt, --data and --out");

    auto dataset = load_dataset(o.str("data"));
    MetricReport rep = evaluate(o.str("ckpt"), dataset);
    const fs::path out = o.str("out");
    fs::create_directories(out / "reports");
    o.echo(out / "config.txt");
    write_report(out / "reports" / "eval.txt", rep);
    std::cout << "iou = " << rep.iou << "\nf1 = " << rep.f1 << "\n";
    return 0;
}

int cmd_crossval(const std::vector<std::string>& args) {
    Options o;
    o.define("data", "", "dataset directory");
    o.define("k", "4", "number of folds");
    o.define("out", "", "run output directory");
    o.define("seed", "1", "root seed");
    define_model_options(o);
    define_train_options(o);
    o.parse(args);
    if (o.str("data").empty() || o.str("out").empty()) throw UsageError("crossval requires --data and --out");

    ModelConfig mc = model_config(o);
    TrainConfig tc = train_config(o);
    auto dataset = load_dataset(o.str("data"));
    const fs::path out = o.str("out");
    o.echo(out / "config.txt");
    auto res = crossval(mc, dataset, std::size_t(o.integer("k")), tc, out);

    fs::create_directories(out / "reports");
    std::ofstream rep(out / "reports" / "crossval.txt");
    rep << "# fold  iou  f1\n";
    for (std::size_t f = 0; f < res.fold_iou.size(); ++f)
        rep << (f + 1) << "\t" << res.fold_iou[f] << "\t" << res.fold_f1[f] << "\n";
    rep << "mean_iou = " << res.mean_iou << "\n";
    rep << "mean_f1 = " << res.mean_f1 << "\n";
    std::cout << "mean iou over " << res.fold_iou.size() << " folds: " << res.mean_iou << "\n";
    return 0;
}

int cmd_compare(const std::vector<std::string>& args) {
    Options o;
    o.define("train-data", "", "training dataset directory");
    o.define("test-data", "", "test dataset directory");
    o.define("seeds", "3", "repeated runs per variant");
    o.define("out", "", "run output directory");
    o.define("seed", "1", "base seed (run s uses seed + s)");
    define_model_options(o, /*with_variant=*/false);
    define_train_options(o);
    o.parse(args);
    if (o.str("train-data").empty() || o.str("test-data").empty() || o.str("out").empty())
        throw UsageError("compare requires --train-data, --test-data and --out");

    TrainConfig tc = train_config(o);
    auto train_set = load_dataset(o.str("train-data"));
    auto test_set = load_dataset(o.str("test-data"));
    const fs::path out = o.str("out");
    o.echo(out / "config.txt");

    std::vector<std::pair<std::string, ModelConfig>> variants = {
        {"vanilla", model_config(o, "vanilla")},
        {"masnet", model_config(o, "masnet")},
        {"early", model_config(o, "early")},
    };
    auto res = compare_variants(variants, train_set, test_set, tc, std::size_t(o.integer("seeds")), out);
    fs::create_directories(out / "reports");
    write_compare_report(out / "reports" / "compare.txt", res);
    for (const auto& row : res.rows)
        std::cout << row.name << ": mean iou " << row.mean << " (spread " << row.spread << ")\n";
    std::cout << "masnet - vanilla delta: " << res.masnet_minus_vanilla << "\n";
    return 0;
}

int cmd_attn_maps(const std::vector<std::string>& args) {
    Options o;
    o.define("ckpt", "", "MASNet checkpoint file");
    o.define("a", "", "image A (PPM)");
    o.define("b", "", "image B (PPM)");
    o.define("out", "", "map output directory");
    o.define("seed", "1", "unused; accepted for config compatibility");
    o.parse(args);
    if (o.str("ckpt").empty() || o.str("a").empty() || o.str("b").empty() || o.str("out").empty())
        throw UsageError("attn-maps requires --ckpt, --a, --b and --out");

    ImagePair pair{read_ppm(o.str("a")), read_ppm(o.str("b")), fs::path(o.str("a")).stem().string()};
    const fs::path out = o.str("out");
    auto files = export_attention_maps(o.str("ckpt"), pair, out / "maps");
    o.echo(out / "config.txt");
    std::cout << "wrote " << files.size() << " maps to " << (out / "maps").string() << "\n";
    return 0;
}

void print_usage(std::ostream& os) {
    os << "usage: masnet <command> [--flag value ...] [--config FILE]\n"
          "commands:\n"
          "  gen-data   generate a synthetic change-detection dataset\n"
          "  train      train a model on a dataset directory\n"
          "  eval       evaluate a checkpoint on a dataset\n"
          "  crossval   k-fold cross-validation\n"
          "  compare    train vanilla vs masnet vs early-fusion over seeds\n"
          "  attn-maps  export mutual-attention maps for one pair\n"
          "run 'masnet <command> --help' for per-command options\n";
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "--help" || args[0] == "help") {
        print_usage(args.empty() ? std::cerr : std::cout);
        return args.empty() ? 1 : 0;
    }
    const std::string cmd = args[0];
    args.erase(args.begin());

    try {
        using Handler = int (*)(const std::vector<std::string>&);
        static const std::map<std::string, Handler> handlers = {
            {"gen-data", cmd_gen_data}, {"train", cmd_train},     {"eval", cmd_eval},
            {"crossval", cmd_crossval}, {"compare", cmd_compare}, {"attn-maps", cmd_attn_maps},
        };
        auto it = handlers.find(cmd);
        if (it == handlers.end()) {
            std::cerr << "error: unknown command '" << cmd << "'\n";
            print_usage(std::cerr);
            return 1;
        }
        return it->second(args);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
