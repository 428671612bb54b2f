#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "peakdyn/experiments.hpp"

using namespace peakdyn;

int main(int argc, char **argv) {
    CLI::App app{"peakdyn: stationary Dirac-comb coagulation-fragmentation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    unsigned long long seed = 0;
    bool seed_set = false;
    int threads = 1;

    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--config", config_path, "experiment config file")->required();
        sub->add_option("--out", out_dir, "output directory (default: config or cwd)");
        sub->add_option("--seed", seed, "64-bit RNG seed override")
            ->each([&](const std::string &) { seed_set = true; });
        sub->add_option("--threads", threads, "worker threads for parameter sweeps");
    };

    const char *kinds[] = {"stationary", "simulate", "moments",
                           "linear",     "stability", "verify-bounds"};
    for (const char *k : kinds) add_common(app.add_subcommand(k));

    CLI11_PARSE(app, argc, argv);
    std::string kind = app.get_subcommands().front()->get_name();

    experiments::RunContext ctx;
    try {
        ctx.cfg = io::Config::from_file(config_path);
    } catch (const std::exception &e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }

    ctx.seed = seed_set ? seed : (unsigned long long)ctx.cfg.get("run.seed", 42LL);
    ctx.threads = threads > 1 ? threads : ctx.cfg.get("run.threads", 1);
    ctx.out_dir = !out_dir.empty() ? out_dir : ctx.cfg.get("run.out", std::string("."));
    if (const char *env = std::getenv("PEAKDYN_OUT")) ctx.out_dir = env;

    return experiments::run_kind(kind, ctx);
}
