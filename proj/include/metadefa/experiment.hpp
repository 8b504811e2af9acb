#pragma once

// Experiment protocol: one source domain, several held-out target domains,
// repeated over a list of seeds. Backs the `metadefa` command-line tool.
//
// CSV schemas (version 1, column order fixed):
//   history.csv          epoch,ce,cam,minor_ori,minor_aug,style,total,val_accuracy
//   eval_per_seed.csv    seed,domain,accuracy
//   eval_summary.csv     domain,mean,std,n_seeds
//   ablation.csv         config,use_cam,use_minor,use_style,<domain>_mean,<domain>_std...,avg_mean,avg_std
//   ablation_per_seed.csv config,seed,<domain>...,avg

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "metadefa/augment.hpp"
#include "metadefa/checkpoint.hpp"
#include "metadefa/data.hpp"
#include "metadefa/losses.hpp"
#include "metadefa/metaloop.hpp"
#include "metadefa/model.hpp"

namespace metadefa {

inline constexpr int kCsvSchemaVersion = 1;

/// Keeps freed tensor buffers in the heap instead of returning them to the OS
/// after every op (glibc only; results are unaffected).
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 128 << 20);
#endif
}

/// Invalid or inconsistent run configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FolderDomain {
    std::string name;
    std::filesystem::path root;
    std::filesystem::path manifest;
};

struct DatasetConfig {
    bool synthetic = true;
    SyntheticSpec synthetic_spec;
    std::uint64_t data_seed = 2024;
    std::vector<FolderDomain> folders;
    std::vector<std::string> class_names;
};

struct RunConfig {
    DatasetConfig dataset;
    std::string source_domain = "source";
    std::vector<std::string> target_domains;  // empty: every non-source domain
    std::vector<std::size_t> widths{16, 32, 32};
    MetaConfig meta = default_meta();
    // Auxiliary terms switch on after a cross-entropy warm-up; from random init they collapse the classifier.
    LossWeights loss_weights{.lambda1 = 0.1, .lambda2 = 0.01};
    CorruptionConfig corruption;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::filesystem::path output_dir = "runs";

    static MetaConfig default_meta() {
        MetaConfig m;
        m.outer_lr = 1.0;
        m.iterations_per_epoch = 20;
        m.warmup_epochs = 20;
        return m;
    }

    std::size_t input_size() const { return dataset.synthetic ? dataset.synthetic_spec.image_size : folder_input_size; }
    std::size_t folder_input_size = 32;

    void validate() const {
        if (seeds.empty()) throw ConfigError("seeds must be non-empty");
        try {
            meta.validate();
            loss_weights.validate();
            corruption.validate();
            if (dataset.synthetic) dataset.synthetic_spec.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (!dataset.synthetic && dataset.folders.empty()) throw ConfigError("dataset.domains must be non-empty");
        for (const auto& t : target_domains)
            if (t == source_domain) throw ConfigError("target domain '" + t + "' is the source domain");
    }
};

// ---------------------------------------------------------------------------
// JSON config (every field optional; unknown keys are errors)
// ---------------------------------------------------------------------------

namespace detail {

using json = nlohmann::json;

class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }
    ~StrictObject() noexcept(false) {
        if (std::uncaught_exceptions() != 0) return;
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
    }

    template <class T>
    void get(const char* key, T& out) {
        used_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string path(const char* key) const { return path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

inline void parse_meta(const json& j, MetaConfig& m) {
    StrictObject o(j, "meta");
    o.get("inner_lr", m.inner_lr);
    o.get("outer_lr", m.outer_lr);
    o.get("tasks_per_iteration", m.tasks_per_iteration);
    o.get("pool_size", m.pool_size);
    o.get("epochs", m.epochs);
    o.get("batch_size", m.batch_size);
    o.get("iterations_per_epoch", m.iterations_per_epoch);
    o.get("train_fraction", m.train_fraction);
    o.get("val_fraction", m.val_fraction);
    o.get("warmup_epochs", m.warmup_epochs);
}

inline void parse_corruption(const json& j, CorruptionConfig& c) {
    StrictObject o(j, "corruption");
    o.get("threshold", c.threshold);
    o.get("severity_min", c.severity_min);
    o.get("severity_max", c.severity_max);
    if (const json* e = o.child("enabled")) {
        if (!e->is_array()) throw ConfigError("corruption.enabled: expected an array");
        c.enabled.clear();
        for (const auto& name : *e) {
            try {
                c.enabled.push_back(corruption_from_name(name.get<std::string>()));
            } catch (const std::exception& ex) {
                throw ConfigError(std::string("corruption.enabled: ") + ex.what());
            }
        }
    }
    if (const json* t = o.child("severity_tables")) {
        StrictObject tables(*t, "corruption.severity_tables");
        for (std::size_t k = 0; k < kNumCorruptionKinds; ++k) tables.get(std::string(kCorruptionNames[k]).c_str(), c.tables[k]);
    }
}

inline void parse_dataset(const json& j, RunConfig& rc) {
    StrictObject o(j, "dataset");
    std::string kind = "synthetic";
    o.get("kind", kind);
    DatasetConfig& d = rc.dataset;
    if (kind == "synthetic") {
        d.synthetic = true;
        o.get("seed", d.data_seed);
        o.get("num_classes", d.synthetic_spec.num_classes);
        o.get("per_class", d.synthetic_spec.per_class);
        o.get("image_size", d.synthetic_spec.image_size);
        if (const json* doms = o.child("domains")) {
            if (!doms->is_array()) throw ConfigError("dataset.domains: expected an array");
            d.synthetic_spec.domains.clear();
            for (const auto& dj : *doms) {
                StrictObject dom(dj, "dataset.domains[]");
                DomainStyle s;
                std::string texture = "flat";
                dom.get("name", s.name);
                dom.get("palette", s.palette);
                dom.get("texture", texture);
                dom.get("noise_level", s.noise_level);
                dom.get("palette_jitter", s.palette_jitter);
                dom.get("texture_amplitude", s.texture_amplitude);
                try {
                    s.texture = texture_from_name(texture);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(std::string("dataset.domains[].texture: ") + e.what());
                }
                if (s.name.empty()) throw ConfigError("dataset.domains[]: name is required");
                d.synthetic_spec.domains.push_back(std::move(s));
            }
        }
    } else if (kind == "folder") {
        d.synthetic = false;
        o.get("input_size", rc.folder_input_size);
        o.get("class_names", d.class_names);
        const json* doms = o.child("domains");
        if (!doms || !doms->is_array()) throw ConfigError("dataset.domains: expected an array of folder domains");
        for (const auto& dj : *doms) {
            StrictObject dom(dj, "dataset.domains[]");
            FolderDomain f;
            std::string root, manifest;
            dom.get("name", f.name);
            dom.get("root", root);
            dom.get("manifest", manifest);
            if (f.name.empty() || root.empty()) throw ConfigError("dataset.domains[]: name and root are required");
            f.root = root;
            f.manifest = manifest.empty() ? f.root / "manifest.tsv" : std::filesystem::path(manifest);
            d.folders.push_back(std::move(f));
        }
    } else {
        throw ConfigError("dataset.kind must be 'synthetic' or 'folder', got '" + kind + "'");
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig rc;
    {
        detail::StrictObject o(j, "config");
        if (const auto* d = o.child("dataset")) detail::parse_dataset(*d, rc);
        o.get("source_domain", rc.source_domain);
        o.get("target_domains", rc.target_domains);
        if (const auto* m = o.child("model")) {
            detail::StrictObject mo(*m, "model");
            mo.get("widths", rc.widths);
        }
        if (const auto* m = o.child("meta")) detail::parse_meta(*m, rc.meta);
        if (const auto* w = o.child("loss_weights")) {
            detail::StrictObject wo(*w, "loss_weights");
            wo.get("lambda1", rc.loss_weights.lambda1);
            wo.get("lambda2", rc.loss_weights.lambda2);
        }
        if (const auto* a = o.child("ablation")) {
            detail::StrictObject ao(*a, "ablation");
            ao.get("cam", rc.loss_weights.use_cam);
            ao.get("minor", rc.loss_weights.use_minor);
            ao.get("style", rc.loss_weights.use_style);
        }
        if (const auto* c = o.child("corruption")) detail::parse_corruption(*c, rc.corruption);
        o.get("seeds", rc.seeds);
        std::string out;
        o.get("output_dir", out);
        if (!out.empty()) rc.output_dir = out;
    }
    rc.validate();
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    }
    return parse_run_config(j);
}

inline nlohmann::json to_json(const RunConfig& rc) {
    nlohmann::json j;
    auto& d = j["dataset"];
    if (rc.dataset.synthetic) {
        d["kind"] = "synthetic";
        d["seed"] = rc.dataset.data_seed;
        d["num_classes"] = rc.dataset.synthetic_spec.num_classes;
        d["per_class"] = rc.dataset.synthetic_spec.per_class;
        d["image_size"] = rc.dataset.synthetic_spec.image_size;
        d["domains"] = nlohmann::json::array();
        for (const auto& s : rc.dataset.synthetic_spec.domains) {
            d["domains"].push_back({{"name", s.name},
                                    {"palette", s.palette},
                                    {"texture", kTextureNames[static_cast<std::size_t>(s.texture)]},
                                    {"noise_level", s.noise_level},
                                    {"palette_jitter", s.palette_jitter},
                                    {"texture_amplitude", s.texture_amplitude}});
        }
    } else {
        d["kind"] = "folder";
        d["input_size"] = rc.folder_input_size;
        d["class_names"] = rc.dataset.class_names;
        d["domains"] = nlohmann::json::array();
        for (const auto& f : rc.dataset.folders)
            d["domains"].push_back({{"name", f.name}, {"root", f.root.string()}, {"manifest", f.manifest.string()}});
    }
    j["source_domain"] = rc.source_domain;
    j["target_domains"] = rc.target_domains;
    j["model"] = {{"widths", rc.widths}};
    const MetaConfig& m = rc.meta;
    j["meta"] = {{"inner_lr", m.inner_lr},
                 {"outer_lr", m.outer_lr},
                 {"tasks_per_iteration", m.tasks_per_iteration},
                 {"pool_size", m.pool_size},
                 {"epochs", m.epochs},
                 {"batch_size", m.batch_size},
                 {"iterations_per_epoch", m.iterations_per_epoch},
                 {"train_fraction", m.train_fraction},
                 {"val_fraction", m.val_fraction},
                 {"warmup_epochs", m.warmup_epochs}};
    j["loss_weights"] = {{"lambda1", rc.loss_weights.lambda1}, {"lambda2", rc.loss_weights.lambda2}};
    j["ablation"] = {{"cam", rc.loss_weights.use_cam},
                     {"minor", rc.loss_weights.use_minor},
                     {"style", rc.loss_weights.use_style}};
    auto& c = j["corruption"];
    c["threshold"] = rc.corruption.threshold;
    c["severity_min"] = rc.corruption.severity_min;
    c["severity_max"] = rc.corruption.severity_max;
    c["enabled"] = nlohmann::json::array();
    for (auto k : rc.corruption.enabled) c["enabled"].push_back(std::string(corruption_name(k)));
    for (std::size_t k = 0; k < kNumCorruptionKinds; ++k)
        c["severity_tables"][std::string(kCorruptionNames[k])] = rc.corruption.tables[k];
    j["seeds"] = rc.seeds;
    j["output_dir"] = rc.output_dir.string();
    return j;
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

inline std::vector<DomainDataset> load_domains(const RunConfig& rc) {
    std::vector<DomainDataset> out;
    if (rc.dataset.synthetic) {
        out = generate_synthetic(rc.dataset.synthetic_spec, rc.dataset.data_seed);
    } else {
        LoadOptions opts{rc.folder_input_size, rc.dataset.class_names};
        for (const auto& f : rc.dataset.folders) {
            DomainDataset ds = load_image_folder(f.root, f.manifest, opts);
            ds.name = f.name;
            if (opts.class_names.empty()) opts.class_names = ds.class_names;
            out.push_back(std::move(ds));
        }
    }
    return out;
}

inline const DomainDataset& find_domain(const std::vector<DomainDataset>& domains, const std::string& name) {
    for (const auto& d : domains)
        if (d.name == name) return d;
    throw ConfigError("unknown domain '" + name + "'");
}

inline std::vector<std::string> resolve_targets(const RunConfig& rc, const std::vector<DomainDataset>& domains) {
    find_domain(domains, rc.source_domain);
    std::vector<std::string> targets = rc.target_domains;
    if (targets.empty())
        for (const auto& d : domains)
            if (d.name != rc.source_domain) targets.push_back(d.name);
    for (const auto& t : targets) {
        if (t == rc.source_domain) throw ConfigError("target domain '" + t + "' is the source domain");
        find_domain(domains, t);
    }
    if (targets.empty()) throw ConfigError("no target domains");
    return targets;
}

inline TinyCnnConfig model_config(const RunConfig& rc, const std::vector<DomainDataset>& domains) {
    TinyCnnConfig c;
    c.widths = rc.widths;
    c.num_classes = find_domain(domains, rc.source_domain).class_names.size();
    c.input_size = rc.input_size();
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch,ce,cam,minor_ori,minor_aug,style,total,val_accuracy\n";
    for (const auto& r : history) {
        os << r.epoch << ',' << fmt_double(r.loss.ce) << ',' << fmt_double(r.loss.cam) << ','
           << fmt_double(r.loss.minor_ori) << ',' << fmt_double(r.loss.minor_aug) << ',' << fmt_double(r.loss.style)
           << ',' << fmt_double(r.loss.total) << ',' << fmt_double(r.val_accuracy) << '\n';
    }
    return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    f << text;
}

inline std::filesystem::path seed_dir(const std::filesystem::path& root, std::uint64_t seed) {
    return root / ("seed_" + std::to_string(seed));
}

// ---------------------------------------------------------------------------
// statistics
// ---------------------------------------------------------------------------

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd r;
    if (v.empty()) return r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return r;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct SeedRun {
    std::uint64_t seed = 0;
    TrainResult result;
};

/// Trains one model per seed on the source domain. Writes
/// <out>/seed_<k>/{initial.ckpt, final.ckpt, history.csv} when `out` is set.
inline std::vector<SeedRun> run_train(const RunConfig& rc, const std::vector<DomainDataset>& domains,
                                      const std::optional<std::filesystem::path>& out) {
    rc.validate();
    const TinyCnnConfig mc = model_config(rc, domains);
    const DomainDataset& source = find_domain(domains, rc.source_domain);
    const CnnLearner learner(mc);
    std::vector<SeedRun> runs;
    for (std::uint64_t seed : rc.seeds) {
        MetaConfig meta = rc.meta;
        meta.seed = seed;
        SeedRun run{seed, train(learner, source.samples, meta, rc.loss_weights, rc.corruption)};
        if (out) {
            const auto dir = seed_dir(*out, seed);
            std::filesystem::create_directories(dir);
            save_checkpoint(run.result.initial, dir / "initial.ckpt");
            save_checkpoint(run.result.final, dir / "final.ckpt");
            write_text(dir / "history.csv", history_csv(run.result.history));
        }
        runs.push_back(std::move(run));
    }
    return runs;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalReport {
    std::vector<std::string> domains;
    std::vector<std::uint64_t> seeds;
    std::map<std::string, std::vector<double>> per_seed;  // domain -> accuracy per seed (seed order)
    std::map<std::string, MeanStd> per_domain;
    std::vector<double> average_per_seed;  // mean over target domains, per seed
    MeanStd average;
    std::string loss_history_path;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["csv_schema_version"] = kCsvSchemaVersion;
        j["seeds"] = seeds;
        j["domains"] = domains;
        for (const auto& d : domains) {
            j["per_domain_accuracy"][d] = {{"mean", per_domain.at(d).mean}, {"std", per_domain.at(d).std}};
            j["per_seed_detail"][d] = per_seed.at(d);
        }
        j["average"] = {{"mean", average.mean}, {"std", average.std}, {"per_seed", average_per_seed}};
        j["loss_history_path"] = loss_history_path;
        return j;
    }
};

/// Accuracy of each seed's parameters on each target domain. Only the target
/// datasets are handed to the classifier.
inline EvalReport evaluate_targets(const TinyCnnConfig& mc, const std::vector<std::uint64_t>& seeds,
                                   const std::vector<ParamSet>& params, const std::vector<const DomainDataset*>& targets) {
    if (params.size() != seeds.size()) throw std::invalid_argument("evaluate_targets: one parameter set per seed");
    const CnnLearner learner(mc);
    EvalReport rep;
    rep.seeds = seeds;
    rep.average_per_seed.assign(seeds.size(), 0.0);
    for (const DomainDataset* t : targets) {
        rep.domains.push_back(t->name);
        auto& accs = rep.per_seed[t->name];
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            accs.push_back(accuracy(learner, params[s], std::span<const LabeledImage>(t->samples)));
            rep.average_per_seed[s] += accs.back() / static_cast<double>(targets.size());
        }
        rep.per_domain[t->name] = mean_std(accs);
    }
    rep.average = mean_std(rep.average_per_seed);
    return rep;
}

inline std::string eval_per_seed_csv(const EvalReport& rep) {
    std::ostringstream os;
    os << "seed,domain,accuracy\n";
    for (std::size_t s = 0; s < rep.seeds.size(); ++s)
        for (const auto& d : rep.domains) os << rep.seeds[s] << ',' << d << ',' << fmt_double(rep.per_seed.at(d)[s]) << '\n';
    return os.str();
}

inline std::string eval_summary_csv(const EvalReport& rep) {
    std::ostringstream os;
    os << "domain,mean,std,n_seeds\n";
    for (const auto& d : rep.domains) {
        os << d << ',' << fmt_double(rep.per_domain.at(d).mean) << ',' << fmt_double(rep.per_domain.at(d).std) << ','
           << rep.seeds.size() << '\n';
    }
    os << "AVG," << fmt_double(rep.average.mean) << ',' << fmt_double(rep.average.std) << ',' << rep.seeds.size() << '\n';
    return os.str();
}

/// Loads <ckpt_root>/seed_<k>/final.ckpt for every seed and evaluates on the targets.
/// Writes eval_report.json, eval_per_seed.csv and eval_summary.csv into `out`.
inline EvalReport run_eval(const RunConfig& rc, const std::vector<DomainDataset>& domains,
                           const std::filesystem::path& ckpt_root, const std::filesystem::path& out) {
    const TinyCnnConfig mc = model_config(rc, domains);
    const TinyCnn net(mc);
    std::vector<ParamSet> params;
    for (std::uint64_t seed : rc.seeds) {
        const auto path = seed_dir(ckpt_root, seed) / "final.ckpt";
        if (!std::filesystem::exists(path)) throw std::runtime_error("missing checkpoint '" + path.string() + "'");
        params.push_back(load_checkpoint(path));
        net.check_params(params.back());
    }
    std::vector<const DomainDataset*> targets;
    for (const auto& name : resolve_targets(rc, domains)) targets.push_back(&find_domain(domains, name));
    EvalReport rep = evaluate_targets(mc, rc.seeds, params, targets);
    rep.loss_history_path = (ckpt_root / "seed_<k>" / "history.csv").string();
    std::filesystem::create_directories(out);
    write_text(out / "eval_report.json", rep.to_json().dump(2) + "\n");
    write_text(out / "eval_per_seed.csv", eval_per_seed_csv(rep));
    write_text(out / "eval_summary.csv", eval_summary_csv(rep));
    return rep;
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    LossWeights weights;
    EvalReport report;
};

/// The four loss configurations: CE only; + L_CAM; + L_minor pair; + L_style.
inline std::vector<std::pair<std::string, LossWeights>> ablation_configs(const LossWeights& full) {
    LossWeights ce_only = full;
    ce_only.lambda1 = 0.0;
    ce_only.lambda2 = 0.0;
    LossWeights cam = full;
    cam.use_cam = true;
    cam.use_minor = false;
    cam.use_style = false;
    LossWeights minor = full;
    minor.use_cam = true;
    minor.use_minor = true;
    minor.use_style = false;
    LossWeights all = full;
    all.use_cam = all.use_minor = all.use_style = true;
    return {{"ce_only", ce_only}, {"ce+cam", cam}, {"ce+cam+minor", minor}, {"ce+cam+minor+style", all}};
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "config,use_cam,use_minor,use_style";
    const auto& domains = rows.front().report.domains;
    for (const auto& d : domains) os << ',' << d << "_mean," << d << "_std";
    os << ",avg_mean,avg_std\n";
    for (const auto& r : rows) {
        const bool ce_only = r.weights.lambda1 == 0.0 && r.weights.lambda2 == 0.0;
        os << r.name << ',' << (!ce_only && r.weights.use_cam) << ',' << (!ce_only && r.weights.use_minor) << ','
           << (!ce_only && r.weights.use_style);
        for (const auto& d : domains)
            os << ',' << fmt_double(r.report.per_domain.at(d).mean) << ',' << fmt_double(r.report.per_domain.at(d).std);
        os << ',' << fmt_double(r.report.average.mean) << ',' << fmt_double(r.report.average.std) << '\n';
    }
    return os.str();
}

inline std::string ablation_per_seed_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "config,seed";
    const auto& domains = rows.front().report.domains;
    for (const auto& d : domains) os << ',' << d;
    os << ",avg\n";
    for (const auto& r : rows)
        for (std::size_t s = 0; s < r.report.seeds.size(); ++s) {
            os << r.name << ',' << r.report.seeds[s];
            for (const auto& d : domains) os << ',' << fmt_double(r.report.per_seed.at(d)[s]);
            os << ',' << fmt_double(r.report.average_per_seed[s]) << '\n';
        }
    return os.str();
}

/// Trains and evaluates every ablation configuration over all seeds.
/// Writes ablation.csv and ablation_per_seed.csv into `out`, plus per-row training
/// artifacts under <out>/<config>/seed_<k>/.
inline std::vector<AblationRow> run_ablation(const RunConfig& rc, const std::vector<DomainDataset>& domains,
                                             const std::filesystem::path& out) {
    const TinyCnnConfig mc = model_config(rc, domains);
    std::vector<const DomainDataset*> targets;
    for (const auto& name : resolve_targets(rc, domains)) targets.push_back(&find_domain(domains, name));
    std::vector<AblationRow> rows;
    for (const auto& [name, weights] : ablation_configs(rc.loss_weights)) {
        RunConfig row_rc = rc;
        row_rc.loss_weights = weights;
        const auto runs = run_train(row_rc, domains, out / name);
        std::vector<ParamSet> finals;
        for (const auto& r : runs) finals.push_back(r.result.final);
        rows.push_back({name, weights, evaluate_targets(mc, rc.seeds, finals, targets)});
    }
    std::filesystem::create_directories(out);
    write_text(out / "ablation.csv", ablation_csv(rows));
    write_text(out / "ablation_per_seed.csv", ablation_per_seed_csv(rows));
    return rows;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

/// Writes every synthetic domain as <out>/<domain>/{manifest.tsv, images/, masks/}.
inline void run_gen_data(const RunConfig& rc, const std::filesystem::path& out) {
    if (!rc.dataset.synthetic) throw ConfigError("gen-data needs a synthetic dataset config");
    for (const auto& ds : generate_synthetic(rc.dataset.synthetic_spec, rc.dataset.data_seed))
        write_image_folder(ds, out / ds.name);
}

}  // namespace metadefa
