// Operator entry point: dataset generation, two-stage training,
// evaluation, and the gradient verification table, all driven by one
// flat key=value config with command-line overrides.
//
// Exit codes: 0 success, 2 config/validation error, 3 missing
// dependency, 4 verification failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mambaloc/config.hpp"
#include "mambaloc/scenegen.hpp"
#include "mambaloc/trainer.hpp"
#include "mambaloc/verification.hpp"

namespace {

using namespace mambaloc;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitVerification = 4;

void print_usage(std::ostream& os) {
    os << "usage: mambaloc <command> [--config FILE] [--key value ...]\n"
          "\n"
          "commands:\n"
          "  gen-data    write train/val/test JSONL and a manifest to --out\n"
          "  train       train one stage (--stage coarse|fine), write a checkpoint\n"
          "  eval        score a split, write the metrics JSON to --out\n"
          "  gradcheck   run the finite-difference suite over every block\n"
          "\n"
          "Any config key can be overridden as --key value (e.g. --seed 17\n"
          "--grid 16 --stage fine). --force is a bare flag.\n";
}

RunConfig parse_args(const std::vector<std::string>& args) {
    RunConfig cfg;
    std::size_t i = 0;
    // First pass so --config applies before other overrides.
    for (std::size_t j = 0; j + 1 < args.size(); ++j) {
        if (args[j] == "--config") cfg.load_file(args[j + 1]);
    }
    while (i < args.size()) {
        const std::string& arg = args[i];
        if (arg.rfind("--", 0) != 0) {
            throw ConfigError("expected --key, got '" + arg + "'");
        }
        const std::string key = arg.substr(2);
        if (key == "force") {
            cfg.set("force", "true");
            ++i;
            continue;
        }
        if (i + 1 >= args.size()) throw ConfigError("missing value for --" + key);
        if (key != "config") cfg.set(key, args[i + 1]);
        i += 2;
    }
    return cfg;
}

int cmd_gen_data(RunConfig& cfg) {
    const WorldConfig wc = cfg.world_config();
    std::string out = cfg.str("out");
    if (out.empty()) out = cfg.str("data_dir");
    World world = generate_world(wc);
    split_dataset(world, wc, wc.seed);
    write_dataset(world, wc, out, cfg.flag("force"));
    const Dataset ds = read_dataset(out);
    std::cout << "wrote dataset to " << out << " (cells=" << ds.world.submaps.size()
              << " queries=" << ds.world.queries.size() << " digest=" << ds.digest << ")\n";
    return kExitOk;
}

int cmd_train(RunConfig& cfg) {
    const std::string stage = cfg.str("stage");
    const Dataset ds = read_dataset(cfg.str("data_dir"));
    std::string out = cfg.str("out");
    if (out.empty()) out = stage == "fine" ? "fine.ckpt" : "coarse.ckpt";
    if (stage == "coarse") {
        train_coarse(ds, cfg, out, std::cout);
    } else if (stage == "fine") {
        train_fine(ds, cfg, cfg.str("coarse_ckpt"), out, std::cout);
    } else {
        throw ConfigError("stage must be 'coarse' or 'fine', got '" + stage + "'");
    }
    std::cout << "checkpoint written to " << out << '\n';
    return kExitOk;
}

int cmd_eval(RunConfig& cfg) {
    const Dataset ds = read_dataset(cfg.str("data_dir"));
    const EvalReport report =
        evaluate(ds, cfg.str("coarse_ckpt"), cfg.str("fine_ckpt"), cfg.str("split"));
    const std::string json = report.to_json().dump(2);
    std::string out = cfg.str("out");
    if (out.empty()) out = "eval.json";
    std::ofstream f(out, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + out);
    f << json << '\n';
    std::cout << json << '\n';
    return kExitOk;
}

int cmd_gradcheck(RunConfig&) {
    const auto table = run_gradient_suite(5, 1e-5);
    bool ok = true;
    std::printf("%-24s %14s  %s\n", "block", "max_rel_err", "status");
    for (const auto& row : table) {
        const bool pass = row.max_rel_err < 1e-4;
        ok = ok && pass;
        std::printf("%-24s %14.3e  %s\n", row.name.c_str(), row.max_rel_err,
                    pass ? "pass" : "FAIL");
    }
    return ok ? kExitOk : kExitVerification;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        print_usage(std::cerr);
        return kExitConfig;
    }
    const std::string command = argv[1];
    if (command == "--help" || command == "-h" || command == "help") {
        print_usage(std::cout);
        return kExitOk;
    }
    std::vector<std::string> args(argv + 2, argv + argc);
    try {
        RunConfig cfg = parse_args(args);
        if (command == "gen-data") return cmd_gen_data(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "eval") return cmd_eval(cfg);
        if (command == "gradcheck") return cmd_gradcheck(cfg);
        std::cerr << "unknown command: " << command << '\n';
        print_usage(std::cerr);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << '\n';
        return kExitDependency;
    } catch (const ValueError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
