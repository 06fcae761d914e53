// Command-line front end: dataset generation, preprocessing, patient splits,
// episodic training/evaluation, ablations, embedding export and DWT inspection.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "amsf/config.hpp"
#include "amsf/harness.hpp"
#include "amsf/io.hpp"
#include "amsf/wavelet.hpp"

namespace fs = std::filesystem;
using namespace amsf;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_file, "JSON config file (merged over defaults)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", opts.overrides,
                    "Override a config key, e.g. --set model.dwt_levels=2");
}

nlohmann::json resolve(const CommonOpts& opts) {
    nlohmann::json j =
        opts.config_file.empty() ? config::defaults() : config::load_file(opts.config_file);
    for (const auto& o : opts.overrides) config::apply_override(j, o);
    return j;
}

episodes::Split parse_split(const std::string& name) { return episodes::split_from_name(name); }

void print_report(const harness::EvalReport& report) {
    std::cout << "episodes:  " << report.episodes << "\n";
    std::cout << "accuracy:  " << 100.0 * report.mean_accuracy << " +/- "
              << 100.0 * report.ci_half_width << " (95% CI)\n";
    std::cout << "confusion (rows = true class):\n" << report.confusion << "\n";
    std::cout << "precision:";
    for (double p : report.precision) std::cout << ' ' << p;
    std::cout << "\nrecall:   ";
    for (double r : report.recall) std::cout << ' ' << r;
    std::cout << "\n";
}

void write_report(const harness::EvalReport& report, const fs::path& file) {
    nlohmann::json j;
    j["episodes"] = report.episodes;
    j["mean_accuracy"] = report.mean_accuracy;
    j["ci_half_width"] = report.ci_half_width;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    j["config_fingerprint"] = report.config_fingerprint;
    std::vector<std::vector<int>> confusion;
    for (int r = 0; r < report.confusion.rows(); ++r) {
        std::vector<int> row;
        for (int c = 0; c < report.confusion.cols(); ++c) row.push_back(report.confusion(r, c));
        confusion.push_back(row);
    }
    j["confusion"] = confusion;
    std::ofstream(file) << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive multi-scale spatial-frequency few-shot classifier"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string out_dir = "data";
    std::string manifest_path;
    std::string checkpoint_path;
    std::string split_name = "test";
    std::string out_file;
    std::string axis = "modules";
    std::string grid_csv;
    std::string seeds_csv = "1,2,3";
    std::string image_path;
    int count = -1;
    int levels = 3;

    auto* generate = app.add_subcommand("generate", "Write a synthetic dataset and manifest");
    add_common(generate, opts);
    generate->add_option("--out", out_dir, "Output directory")->required();

    auto* preprocess = app.add_subcommand("preprocess", "Window, crop and resize a dataset");
    add_common(preprocess, opts);
    preprocess->add_option("--manifest", manifest_path, "Input manifest")->required();
    preprocess->add_option("--out", out_dir, "Output directory")->required();

    auto* split = app.add_subcommand("split", "Assign patients to train/val/test");
    add_common(split, opts);
    split->add_option("--manifest", manifest_path, "Manifest to annotate in place")->required();

    auto* train_cmd = app.add_subcommand("train", "Episodic training run");
    add_common(train_cmd, opts);
    train_cmd->add_option("--manifest", manifest_path, "Split manifest")->required();
    train_cmd->add_option("--out", out_dir, "Run directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    add_common(eval_cmd, opts);
    eval_cmd->add_option("--manifest", manifest_path, "Split manifest")->required();
    eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file");
    eval_cmd->add_option("--split", split_name, "train|val|test");
    eval_cmd->add_option("--out", out_file, "Write the report as JSON");

    auto* ablate = app.add_subcommand("ablate", "Train/evaluate an ablation grid");
    add_common(ablate, opts);
    ablate->add_option("--manifest", manifest_path, "Split manifest")->required();
    ablate->add_option("--axis", axis, "modules|insertion_depth|dwt_level");
    ablate->add_option("--grid", grid_csv, "Comma-separated grid values (non-module axes)");
    ablate->add_option("--seeds", seeds_csv, "Comma-separated seeds");
    ablate->add_option("--out", out_dir, "Output directory")->required();

    auto* export_cmd = app.add_subcommand("export-embeddings", "Dump pooled features per item");
    add_common(export_cmd, opts);
    export_cmd->add_option("--manifest", manifest_path, "Split manifest")->required();
    export_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file");
    export_cmd->add_option("--split", split_name, "train|val|test");
    export_cmd->add_option("--count", count, "Max rows (-1 for all)");
    export_cmd->add_option("--out", out_file, "Output TSV")->required();

    auto* inspect = app.add_subcommand("inspect-dwt", "Dump a subband pyramid as images");
    inspect->add_option("--image", image_path, "Input PGM image")->required();
    inspect->add_option("--levels", levels, "Decomposition levels (1..4)");
    inspect->add_option("--out", out_dir, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*inspect) {
            Matrix img = io::read_pgm(image_path);
            wavelet::SubbandPyramid pyr = wavelet::dwt_cascade(img, levels);
            fs::create_directories(out_dir);
            auto dump = [&](const Matrix& m, const std::string& name) {
                const double lo = m.minCoeff(), hi = m.maxCoeff();
                Matrix norm = hi > lo ? ((m.array() - lo) / (hi - lo)).matrix() : m;
                io::write_pgm(fs::path(out_dir) / (name + ".pgm"), norm);
                std::cout << name << ": " << m.rows() << "x" << m.cols() << " energy "
                          << m.squaredNorm() << "\n";
            };
            for (int l = 1; l <= levels; ++l) {
                const auto& sb = pyr.coeffs[l - 1];
                dump(sb.ll, "ll" + std::to_string(l));
                dump(sb.lh, "lh" + std::to_string(l));
                dump(sb.hl, "hl" + std::to_string(l));
                dump(sb.hh, "hh" + std::to_string(l));
                wavelet::DirectionalMaps maps = wavelet::idwt_directional(pyr, l);
                dump(maps.lh, "rlh" + std::to_string(l));
                dump(maps.hl, "rhl" + std::to_string(l));
                dump(maps.hh, "rhh" + std::to_string(l));
            }
            dump(wavelet::reconstruct(pyr), "reconstruction");
            return 0;
        }

        nlohmann::json j = resolve(opts);
        config::RunConfig cfg = config::from_json(j);
        const std::string fp = config::fingerprint(j);

        if (*generate) {
            auto m = datasets::generate_synthetic(cfg.recipe, out_dir);
            std::cout << "wrote " << m.items.size() << " images under " << out_dir << "\n";
            return 0;
        }
        if (*preprocess) {
            auto m = episodes::read_manifest(manifest_path);
            const fs::path in_root = fs::path(manifest_path).parent_path();
            auto out = datasets::preprocess_dataset(m, in_root, out_dir, cfg.preprocess);
            std::cout << "preprocessed " << out.items.size() << " images into " << out_dir
                      << "\n";
            return 0;
        }
        if (*split) {
            auto m = episodes::read_manifest(manifest_path);
            episodes::split_by_patient(m, cfg.split_ratios, cfg.split_seed);
            episodes::write_manifest(m, manifest_path);
            std::cout << "assigned " << m.items.size() << " items across train/val/test\n";
            return 0;
        }

        auto m = episodes::read_manifest(manifest_path);
        const fs::path root = fs::path(manifest_path).parent_path();
        harness::ImageCache cache(m, root);

        if (*train_cmd) {
            AmsfNet model(cfg.model);
            harness::TrainResult result = harness::train(model, m, cache, cfg.train, out_dir, fp);
            std::cout << "trained " << result.losses.size() << " episodes";
            if (result.used_validation) {
                std::cout << ", best val accuracy " << 100.0 * result.best_val_accuracy
                          << "% at episode " << result.best_episode;
            }
            std::cout << "\ncheckpoint: " << (fs::path(out_dir) / "checkpoint.bin").string()
                      << "\n";
            return 0;
        }
        if (*eval_cmd) {
            AmsfNet model(cfg.model);
            if (!checkpoint_path.empty()) io::load_checkpoint(checkpoint_path, model.store());
            auto report =
                harness::evaluate(model, m, cache, parse_split(split_name), cfg.eval, fp);
            print_report(report);
            if (!out_file.empty()) write_report(report, out_file);
            return 0;
        }
        if (*ablate) {
            std::vector<int> grid;
            if (!grid_csv.empty()) {
                for (const auto& tok : CLI::detail::split(grid_csv, ','))
                    grid.push_back(std::stoi(tok));
            } else if (axis == "dwt_level") {
                grid = {1, 2, 3, 4};
            } else if (axis == "insertion_depth") {
                for (int l = 0; l < cfg.model.backbone.depth; ++l) grid.push_back(l);
            }
            std::vector<uint64_t> seeds;
            for (const auto& tok : CLI::detail::split(seeds_csv, ','))
                seeds.push_back(std::stoull(tok));
            auto rows = harness::run_ablation(axis, grid, cfg.model, cfg.train, cfg.eval, m,
                                              cache, seeds, out_dir);
            std::cout << "rank  label              median accuracy\n";
            int rank = 1;
            for (const auto& r : rows) {
                std::printf("%-5d %-18s %.2f%%\n", rank++, r.label.c_str(),
                            100.0 * r.median_accuracy);
            }
            return 0;
        }
        if (*export_cmd) {
            AmsfNet model(cfg.model);
            if (!checkpoint_path.empty()) io::load_checkpoint(checkpoint_path, model.store());
            harness::export_embeddings(model, m, cache, parse_split(split_name), count, out_file);
            std::cout << "wrote " << out_file << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
