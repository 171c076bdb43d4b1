// crac: generate data, train, evaluate, sweep, report and self-check.
#include <cstdio>
#include <exception>
#include <iostream>

int cmd_gen(int argc, char** argv);
int cmd_train(int argc, char** argv);
int cmd_eval(int argc, char** argv);
int cmd_sweep(int argc, char** argv);
int cmd_report(int argc, char** argv);
int cmd_check(int argc, char** argv);

namespace {

void usage() {
    std::puts(
        "usage: crac <command> [options]\n"
        "\n"
        "commands:\n"
        "  gen     generate a synthetic CRSD dataset\n"
        "  train   train a model from a config file\n"
        "  eval    evaluate a checkpoint and emit metrics CSVs\n"
        "  sweep   train/eval over a list of penalty weights\n"
        "  report  Friedman rank table from metric CSVs or a value table\n"
        "  check   penalty axioms, gradient checks and KKT validation\n"
        "\n"
        "run 'crac <command> --help' for per-command flags");
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        usage();
        return 2;
    }
    const std::string cmd = argv[1];
    if (cmd == "--help" || cmd == "-h" || cmd == "help") {
        usage();
        return 0;
    }
    try {
        if (cmd == "gen") return cmd_gen(argc - 1, argv + 1);
        if (cmd == "train") return cmd_train(argc - 1, argv + 1);
        if (cmd == "eval") return cmd_eval(argc - 1, argv + 1);
        if (cmd == "sweep") return cmd_sweep(argc - 1, argv + 1);
        if (cmd == "report") return cmd_report(argc - 1, argv + 1);
        if (cmd == "check") return cmd_check(argc - 1, argv + 1);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "unknown command: " << cmd << "\n";
    usage();
    return 2;
}
