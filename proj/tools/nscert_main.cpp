#include "nscert/cli.hpp"

#include <CLI11.hpp>

#include <string>

int main(int argc, char** argv) {
    CLI::App app{"nscert: solve, optimize and certify the non-smooth elliptic control problem"};
    app.require_subcommand(1);

    nscert::CliOptions opts;
    std::string command;
    for (const char* name : {"solve", "optimize", "certify", "path", "mms"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", opts.config_path, "instance configuration file")
            ->required();
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--seed", opts.seed, "RNG seed for direction sampling");
        sub->add_option("--jobs", opts.jobs, "parallel workers for VI direction sampling");
        sub->add_flag("--best-effort", opts.best_effort,
                      "keep going and report instead of failing on solver errors");
        sub->callback([&command, name] { command = name; });
    }

    CLI11_PARSE(app, argc, argv);
    return nscert::run_command(command, opts);
}
