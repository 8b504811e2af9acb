// metadefa: train / eval / ablate / heatmap / gen-data.
// Exit codes: 0 success, 1 config error, 2 runtime error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "metadefa/experiment.hpp"
#include "metadefa/heatmap.hpp"

namespace fs = std::filesystem;
using namespace metadefa;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string output;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON run config (defaults when omitted)");
    sub->add_option("--seed", c.seed, "run a single seed instead of the config's seed list");
    sub->add_option("--output", c.output, "output directory (overrides output_dir)");
}

RunConfig resolve(const Common& c) {
    RunConfig rc = c.config.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(c.config);
    if (c.seed) rc.seeds = {*c.seed};
    if (!c.output.empty()) rc.output_dir = c.output;
    rc.validate();
    return rc;
}

std::vector<DomainDataset> domains_or_config_error(const RunConfig& rc) {
    try {
        return load_domains(rc);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"MetaDefa single-domain generalization experiments"};
    app.require_subcommand(1);

    Common train_c, eval_c, ablate_c, gen_c, heat_c;
    auto* train_cmd = app.add_subcommand("train", "meta-train one model per seed on the source domain");
    add_common(train_cmd, train_c);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate final checkpoints on the target domains");
    add_common(eval_cmd, eval_c);
    std::string ckpt_root;
    eval_cmd->add_option("--checkpoints", ckpt_root, "directory holding seed_<k>/final.ckpt (default: output_dir)");

    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate the four loss configurations");
    add_common(ablate_cmd, ablate_c);

    auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic domains as image folders");
    add_common(gen_cmd, gen_c);

    auto* heat_cmd = app.add_subcommand("heatmap", "export CAM/CAAM heatmaps for one image");
    add_common(heat_cmd, heat_c);
    std::string heat_ckpt, heat_image, heat_mask, heat_donor;
    std::optional<std::size_t> heat_label;
    heat_cmd->add_option("--checkpoint", heat_ckpt, "checkpoint file")->required();
    heat_cmd->add_option("--image", heat_image, "input image (PPM/PGM)")->required();
    heat_cmd->add_option("--mask", heat_mask, "foreground mask (PGM)");
    heat_cmd->add_option("--donor", heat_donor, "background donor image for the augmented view");
    heat_cmd->add_option("--label", heat_label, "class for the CAM (default: predicted class)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*train_cmd) {
            const RunConfig rc = resolve(train_c);
            const auto domains = domains_or_config_error(rc);
            const auto runs = run_train(rc, domains, rc.output_dir);
            for (const auto& r : runs) {
                const auto& h = r.result.history;
                std::cout << "seed " << r.seed << ": " << h.size() << " epochs";
                if (!h.empty()) std::cout << ", final loss " << h.back().loss.total << ", val acc " << h.back().val_accuracy;
                std::cout << " -> " << seed_dir(rc.output_dir, r.seed).string() << "\n";
            }
        } else if (*eval_cmd) {
            const RunConfig rc = resolve(eval_c);
            const auto domains = domains_or_config_error(rc);
            const fs::path root = ckpt_root.empty() ? rc.output_dir : fs::path(ckpt_root);
            const EvalReport rep = run_eval(rc, domains, root, rc.output_dir);
            std::cout << rep.to_json().dump(2) << "\n";
        } else if (*ablate_cmd) {
            const RunConfig rc = resolve(ablate_c);
            const auto domains = domains_or_config_error(rc);
            const auto rows = run_ablation(rc, domains, rc.output_dir);
            for (const auto& r : rows)
                std::cout << r.name << ": avg " << r.report.average.mean << " +- " << r.report.average.std << "\n";
            std::cout << "wrote " << (rc.output_dir / "ablation.csv").string() << "\n";
        } else if (*gen_cmd) {
            const RunConfig rc = resolve(gen_c);
            run_gen_data(rc, rc.output_dir);
            std::cout << "wrote " << rc.output_dir.string() << "\n";
        } else if (*heat_cmd) {
            const RunConfig rc = resolve(heat_c);
            TinyCnnConfig mc;
            mc.widths = rc.widths;
            mc.num_classes = rc.dataset.synthetic ? rc.dataset.synthetic_spec.num_classes : rc.dataset.class_names.size();
            mc.input_size = rc.input_size();
            const ParamSet params = load_checkpoint(heat_ckpt);
            if (params.contains("fc.bias")) mc.num_classes = params.at("fc.bias").size();
            mc.validate();
            const TinyCnn net(mc);
            HeatmapRequest req;
            req.image = read_ppm(heat_image);
            if (!heat_mask.empty()) req.mask = read_pgm(heat_mask);
            if (!heat_donor.empty()) req.donor = read_ppm(heat_donor);
            req.label = heat_label;
            req.corruption = rc.corruption;
            req.seed = rc.seeds.front();
            const HeatmapFiles f = export_heatmaps(net, params, req, rc.output_dir);
            std::cout << "class " << f.cam_class << ": " << f.cam.string() << " " << f.caam.string() << " "
                      << f.cam_aug.string() << " " << f.caam_aug.string() << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
