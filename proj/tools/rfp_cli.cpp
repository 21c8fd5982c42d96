#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rfp/pipeline.hpp"

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::vector<std::string> sets;
};

rfp::PipelineConfig resolve(const Globals& g)
{
    std::optional<std::filesystem::path> file;
    if (!g.config.empty()) file = g.config;
    return rfp::load_config(file, g.seed, g.sets, g.out);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Patient-specific radiomic fingerprints on synthetic knee phantoms"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand
    Globals g;
    app.add_option("--config", g.config, "pipeline config JSON")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "base seed (overrides config)");
    app.add_option("--out", g.out, "output root for artifacts whose path is not set in the config");
    app.add_option("--set", g.sets, "override a config entry, key.path=value (repeatable)");

    auto* gen = app.add_subcommand("gen", "generate the synthetic phantom dataset");
    auto* tp = app.add_subcommand("train-persona", "train the persona diffusion model on healthy subjects");
    auto* rec = app.add_subcommand("reconstruct", "inpaint a healthy persona for every subject and view");
    auto* ext = app.add_subcommand("extract", "extract radiomic features to CSV");
    auto* train = app.add_subcommand("train", "train fingerprint models for every task and run");
    auto* ev = app.add_subcommand("eval", "evaluate trained models on the validation split");
    auto* ex = app.add_subcommand("explain", "write an interpretability report for one subject");
    std::string subject, task = "abn";
    int run = 0;
    ex->add_option("--subject", subject, "subject id")->required();
    ex->add_option("--task", task, "abn, acl or men");
    ex->add_option("--run", run, "model run index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const auto cfg = resolve(g);
        if (gen->parsed()) {
            rfp::cmd_gen(cfg);
            std::cout << "wrote " << cfg.subjects << " subjects to " << cfg.paths.data.string() << "\n";
        } else if (tp->parsed()) {
            rfp::cmd_train_persona(cfg);
            std::cout << "wrote " << cfg.paths.persona_model.string() << "\n";
        } else if (rec->parsed()) {
            rfp::cmd_reconstruct(cfg);
            std::cout << "wrote personas under " << cfg.paths.data.string() << "\n";
        } else if (ext->parsed()) {
            rfp::cmd_extract(cfg);
            std::cout << "wrote " << cfg.paths.features.string() << "\n";
        } else if (train->parsed()) {
            rfp::cmd_train(cfg);
            std::cout << "wrote models under " << cfg.paths.models.string() << "\n";
        } else if (ev->parsed()) {
            const auto rep = rfp::cmd_eval(cfg);
            for (const auto& [name, block] : rep.at("tasks").items())
                std::cout << name << ": auc " << block.at("auc").at("mean").get<double>() << " acc "
                          << block.at("acc").at("mean").get<double>() << "\n";
        } else if (ex->parsed()) {
            const auto rep = rfp::cmd_explain(cfg, subject, rfp::parse_task(task), run);
            std::cout << subject << " " << task << ": p=" << rep.probability << " selected=" << rep.selected_count
                      << "\n";
        }
    } catch (const rfp::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const rfp::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
