// Command-line front end for the federated ODE workbench.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "fode/error.hpp"
#include "fode/experiment.hpp"
#include "fode/model.hpp"

namespace {

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    return out;
}

std::vector<fode::Family> parse_family_list(const std::string& csv) {
    std::vector<fode::Family> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(fode::family_from_name(item));
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fode - federated learning workbench for iterated residual networks"};
    app.require_subcommand(1);

    // count
    auto* count = app.add_subcommand("count", "Parameter counts and communication sizes");
    std::string count_family = "odenet";
    std::string count_depths, count_iters, count_widths;
    int count_classes = 10;
    bool count_vs = false;
    std::string count_output;
    count->add_option("--family", count_family, "Comma-separated families (resnet,odenet,dsodenet)");
    count->add_option("--depth", count_depths, "Comma-separated nominal depths (e.g. 34,50,101)");
    count->add_option("--iters", count_iters, "Comma-separated iteration counts");
    count->add_option("--widths", count_widths, "Stage widths a,b,c (default: family preset)");
    count->add_option("--classes", count_classes, "Classifier output classes");
    count->add_flag("--vs-resnet50", count_vs, "Append reduction percentage vs the resnet-50 preset");
    count->add_option("-o,--output", count_output, "Write CSV here instead of stdout");

    // config-driven commands
    std::string config_path;
    auto add_config_cmd = [&](const char* name, const char* help) {
        auto* cmd = app.add_subcommand(name, help);
        cmd->add_option("--config", config_path, "Experiment config JSON")->required();
        return cmd;
    };
    auto* train = add_config_cmd("train", "Train one model and emit the trained-as/tested-as grid");
    auto* federate = add_config_cmd("federate", "Run federated training per the config");
    std::string federate_transport;
    federate->add_option("--transport", federate_transport, "Override transport (in_process|socket)");
    auto* partition = add_config_cmd("partition", "Emit per-client class histograms");
    auto* run = add_config_cmd("run", "Run whatever the config's 'command' field says");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string eval_checkpoint;
    int eval_iters = 0;
    std::string eval_config;
    eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
    eval->add_option("--iters", eval_iters, "Override iteration count at inference");
    eval->add_option("--config", eval_config, "Config JSON providing the dataset section")->required();

    // serve / client (separate-process socket mode)
    auto* serve_cmd = add_config_cmd("serve", "Run the federation server over TCP");
    int serve_port = 0;
    serve_cmd->add_option("--port", serve_port, "TCP port (0 = ephemeral)");
    auto* client_cmd = add_config_cmd("client", "Run one federation client over TCP");
    int client_id = -1;
    std::string client_connect = "127.0.0.1:7447";
    client_cmd->add_option("--id", client_id, "Client id (0..K-1)")->required();
    client_cmd->add_option("--connect", client_connect, "Server address host:port");

    CLI11_PARSE(app, argc, argv);

    try {
        if (count->parsed()) {
            fode::CountRequest request;
            request.families = parse_family_list(count_family);
            request.depths = parse_int_list(count_depths);
            request.iterations = parse_int_list(count_iters);
            request.classes = count_classes;
            request.versus_resnet50 = count_vs;
            if (!count_widths.empty()) {
                const auto w = parse_int_list(count_widths);
                if (w.size() != 3) throw fode::ConfigError("--widths needs exactly 3 values");
                request.widths = std::array<int, 3>{w[0], w[1], w[2]};
            }
            if (count_output.empty()) {
                fode::run_count(request, std::cout);
            } else {
                std::ofstream out(count_output, std::ios::trunc);
                if (!out) throw fode::Error("cannot open output file: " + count_output);
                fode::run_count(request, out);
            }
            return 0;
        }

        if (eval->parsed()) {
            fode::ExperimentConfig config = fode::load_experiment_config(eval_config);
            config.checkpoint = eval_checkpoint;
            if (eval->count("--iters") > 0) config.eval_iterations = eval_iters;
            fode::run_eval(config, std::cout);
            return 0;
        }

        fode::ExperimentConfig config = fode::load_experiment_config(config_path);
        if (train->parsed()) {
            config.command = "train";
            return fode::run_config(config);
        }
        if (federate->parsed()) {
            config.command = "federate";
            if (!federate_transport.empty()) config.federated.transport = federate_transport;
            return fode::run_config(config);
        }
        if (partition->parsed()) {
            config.command = "partition";
            return fode::run_config(config);
        }
        if (run->parsed()) {
            return fode::run_config(config);
        }
        if (serve_cmd->parsed()) {
            fode::run_serve(config, serve_port);
            return 0;
        }
        if (client_cmd->parsed()) {
            const auto colon = client_connect.rfind(':');
            if (colon == std::string::npos) {
                throw fode::ConfigError("--connect must be host:port");
            }
            fode::run_client(config, client_id, client_connect.substr(0, colon),
                             std::stoi(client_connect.substr(colon + 1)));
            return 0;
        }
    } catch (const fode::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
