// parastrip <command> --config <path> [--output <dir>] [--seed <u64>] [--jobs <k>]

#include <CLI11.hpp>

#include "parastrip/cli.hpp"

int main(int argc, char** argv) {
    namespace pc = parastrip::cli;
    CLI::App app{"Parabolic solver with analyticity diagnostics and XVA pricing"};
    app.set_version_flag("--version", std::string(pc::version));

    pc::RunOptions opt;
    std::string output;
    std::uint64_t seed = 0;
    int jobs = 1;
    app.add_option("command", opt.command, "solve | verify-analyticity | xva | ellipticity | maxreg | convergence")
        ->required()
        ->check(CLI::IsMember(pc::commands()));
    app.add_option("--config,-c", opt.config_path, "JSON experiment config")->required();
    auto* out_opt = app.add_option("--output,-o", output, "output directory (overrides output_dir)");
    auto* seed_opt = app.add_option("--seed", seed, "64-bit RNG seed for ensembles");
    auto* jobs_opt = app.add_option("--jobs,-j", jobs, "parallel jobs for sweeps")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (*out_opt) opt.output = output;
    if (*seed_opt) opt.seed = seed;
    if (*jobs_opt) opt.jobs = jobs;
    return pc::run(opt);
}
