#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fewshot/commands.hpp"
#include "fewshot/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Few-shot relation classification: episodic training of a miniature transformer "
                 "encoder under a joint cross-entropy + contrastive + L2 objective"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;
    int threads = 0;
    std::string checkpoint;
    std::string episode_dump;

    const std::vector<std::string> names = {"train",         "eval",        "sweep",
                                            "gradcheck",     "make-synthetic", "inspect-data"};
    const std::vector<std::string> descriptions = {
        "meta-train the encoder; writes checkpoint.json, vocab.txt, train_log.jsonl",
        "episodic evaluation; writes report.json, protocol_results.csv, per_class.csv",
        "loss-weight ablation (full train + eval per cell); writes ablation.csv",
        "finite-difference gradient check over all losses and a small encoder",
        "generate a synthetic dataset file; writes synthetic.json and vocab.txt",
        "print relation/example/vocabulary counts for the configured data"};
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto* sub = app.add_subcommand(names[i], descriptions[i]);
        sub->add_option("-c,--config", config_path, "JSON config file");
        sub->add_option("-s,--set", overrides,
                        "dotted-path config override, e.g. --set loss.beta=1.0");
        sub->add_option("-o,--output-dir", output_dir, "output directory (beats config and env)");
        sub->add_option("-t,--threads", threads, "worker threads for evaluation (1 = serial)");
        sub->add_option("--checkpoint", checkpoint, "encoder checkpoint for eval");
        sub->add_option("--dump-episodes", episode_dump, "write a JSON-lines episode audit file");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        if (!output_dir.empty()) overrides.push_back("output_dir=" + output_dir);
        if (threads > 0) overrides.push_back("threads=" + std::to_string(threads));
        if (!checkpoint.empty()) overrides.push_back("checkpoint=" + checkpoint);
        if (!episode_dump.empty()) overrides.push_back("episode_dump=" + episode_dump);

        const auto config = fewshot::cli::load_config(config_path, overrides);
        fewshot::cli::run_command(command, config, std::cout);
        return fewshot::cli::kExitOk;
    } catch (const fewshot::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return fewshot::cli::kExitConfig;
    } catch (const fewshot::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return fewshot::cli::kExitData;
    } catch (const fewshot::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return fewshot::cli::kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return fewshot::cli::kExitConfig;
    }
}
