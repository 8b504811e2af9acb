// Acceptance run: one PASS/FAIL line per headline criterion, then a summary.
// Exit status is non-zero when any headline criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "criteria.hpp"
#include "gradcheck.hpp"
#include "metadefa/experiment.hpp"

using namespace metadefa;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << name << "  -- " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("metadefa_acceptance_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void gradient_suite() {
    const auto t0 = Clock::now();
    const auto reports = gradcheck::run_all(100, 20240);
    const double secs = seconds_since(t0);
    bool ok = secs < 120.0;
    int cases = 0;
    double worst = 0.0;
    std::string bad;
    for (const auto& r : reports) {
        cases += r.cases;
        worst = std::max(worst, r.max_rel_error);
        if (!r.passed(100)) {
            ok = false;
            bad += " " + r.primitive;
        }
    }
    report("gradient suite", ok,
           std::to_string(reports.size()) + " primitives, " + std::to_string(cases) + " cases, max rel error " +
               criteria::fmt(worst) + ", " + criteria::fmt(secs) + " s" + (bad.empty() ? "" : "; failing:" + bad));
}

void outcome(const std::string& name, const criteria::Outcome& o) { report(name, o.pass, o.detail); }

// Default benchmark, default hyperparameters, five seeds, four loss configurations.
void desk_scale(std::vector<AblationRow>& rows) {
    const fs::path out = scratch("ablation");
    const RunConfig rc = parse_run_config(nlohmann::json::object());
    const auto t0 = Clock::now();
    rows = run_ablation(rc, load_domains(rc), out);
    const double secs = seconds_since(t0);

    const AblationRow& ce = rows.front();
    const AblationRow& full = rows.back();
    int wins = 0;
    std::ostringstream per_seed;
    for (std::size_t s = 0; s < rc.seeds.size(); ++s) {
        const double f = full.report.average_per_seed[s], c = ce.report.average_per_seed[s];
        wins += f >= c ? 1 : 0;
        per_seed << " " << criteria::fmt(f) << "/" << criteria::fmt(c);
    }
    std::istringstream csv(slurp(out / "ablation.csv"));
    std::string line;
    std::vector<std::string> names;
    std::getline(csv, line);
    while (std::getline(csv, line)) names.push_back(line.substr(0, line.find(',')));
    const bool four_rows = names == std::vector<std::string>{"ce_only", "ce+cam", "ce+cam+minor", "ce+cam+minor+style"};

    std::ostringstream d;
    d << "full >= ce_only in " << wins << "/" << rc.seeds.size() << " seeds (full/ce avg target acc:" << per_seed.str()
      << "); mean " << criteria::fmt(full.report.average.mean) << " vs " << criteria::fmt(ce.report.average.mean)
      << "; ablation.csv rows " << (four_rows ? "ok" : "WRONG") << "; " << criteria::fmt(secs) << " s";
    for (const auto& r : rows) d << "; " << r.name << " " << criteria::fmt(r.report.average.mean);
    report("desk-scale generalization", wins >= 4 && four_rows && secs < 600.0, d.str());
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(METADEFA_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void determinism() {
    const fs::path dir = scratch("determinism");
    std::ofstream(dir / "config.json") << R"({"meta": {"epochs": 4}, "seeds": [0, 1]})";
    const std::string cfg = (dir / "config.json").string();
    const int a = run_cli("train --config " + cfg + " --output " + (dir / "a").string());
    const int b = run_cli("train --config " + cfg + " --output " + (dir / "b").string());
    int compared = 0, differing = 0;
    for (const char* seed : {"seed_0", "seed_1"})
        for (const char* f : {"history.csv", "initial.ckpt", "final.ckpt"}) {
            const std::string x = slurp(dir / "a" / seed / f), y = slurp(dir / "b" / seed / f);
            ++compared;
            if (x.empty() || x != y) ++differing;
        }
    report("determinism", a == 0 && b == 0 && differing == 0,
           "two `metadefa train` runs, " + std::to_string(compared) + " files compared, " + std::to_string(differing) +
               " differ (exit codes " + std::to_string(a) + ", " + std::to_string(b) + ")");
}

// Not a headline criterion: source validation accuracy of the full objective after training.
void source_fit(const std::vector<AblationRow>& rows) {
    if (rows.empty()) return;
    const fs::path root = fs::temp_directory_path() / "metadefa_acceptance_ablation" / rows.back().name;
    int above = 0, seeds = 0;
    std::string accs;
    for (std::uint64_t s = 0; s < 5; ++s) {
        std::istringstream in(slurp(seed_dir(root, s) / "history.csv"));
        std::string line, last;
        while (std::getline(in, line)) last = line;
        if (last.empty() || last.starts_with("epoch")) continue;
        const double acc = std::stod(last.substr(last.rfind(',') + 1));
        ++seeds;
        above += acc > 0.9 ? 1 : 0;
        accs += " " + criteria::fmt(acc);
    }
    std::cout << (above == 5 ? "PASS" : "FAIL") << "  [extra, not counted] source validation > 90% after 30 epochs  -- "
              << above << "/" << seeds << " seeds; final val acc:" << accs << std::endl;
}

}  // namespace

int main() {
    tune_allocator();
    gradient_suite();
    outcome("JS properties", criteria::js_properties(1000, 7));
    outcome("CAM identity", criteria::cam_identity(100, 8));
    outcome("first-order MAML oracle", criteria::fomaml_oracle(20, 9));
    outcome("augmentation contracts", criteria::augmentation_contracts(100, 10));
    std::vector<AblationRow> rows;
    desk_scale(rows);
    determinism();
    outcome("heatmap export", criteria::heatmap_export(scratch("heatmap"), 11));
    source_fit(rows);
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
