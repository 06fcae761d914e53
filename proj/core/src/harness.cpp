#include "amsf/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "amsf/io.hpp"
#include "amsf/optimizer.hpp"

namespace amsf::harness {

using episodes::Split;

void validate(const TrainConfig& cfg) {
    if (cfg.total_episodes < 0) throw ConfigError("train: total_episodes must be >= 0");
    if (cfg.warmup_episodes < 0 || cfg.warmup_episodes > cfg.total_episodes) {
        throw ConfigError("train: warmup must be in [0, total_episodes]");
    }
    for (size_t i = 0; i < cfg.milestones.size(); ++i) {
        if (cfg.milestones[i] >= cfg.total_episodes) {
            throw ConfigError("train: milestones must be < total_episodes");
        }
        if (i > 0 && cfg.milestones[i] <= cfg.milestones[i - 1]) {
            throw ConfigError("train: milestones must be strictly increasing");
        }
    }
    if (cfg.lr <= 0.0) throw ConfigError("train: lr must be > 0");
}

double lr_at(const TrainConfig& cfg, int episode) {
    double lr = cfg.lr;
    if (cfg.warmup_episodes > 0 && episode < cfg.warmup_episodes) {
        lr *= static_cast<double>(episode + 1) / cfg.warmup_episodes;
    }
    for (int m : cfg.milestones) {
        if (episode >= m) lr *= cfg.decay_factor;
    }
    return lr;
}

double episodic_loss(const Matrix& probs, const std::vector<int>& labels) {
    require(probs.rows() == static_cast<long>(labels.size()), "episodic_loss: row/label mismatch");
    require(probs.rows() > 0, "episodic_loss: empty batch");
    double sum = 0.0;
    for (long i = 0; i < probs.rows(); ++i) {
        if (std::abs(probs.row(i).sum() - 1.0) > 1e-6) {
            throw DimensionError("episodic_loss: probability row does not sum to 1");
        }
        const int y = labels[i];
        require(y >= 0 && y < probs.cols(), "episodic_loss: label out of range");
        sum -= std::log(probs(i, y));
    }
    return sum / static_cast<double>(probs.rows());
}

ImageCache::ImageCache(const episodes::DatasetManifest& m, const std::filesystem::path& root) {
    images_.reserve(m.items.size());
    for (const auto& it : m.items) images_.push_back(io::read_pgm(root / it.rel_path));
}

EpisodeData materialize(const episodes::EpisodeSpec& spec, const ImageCache& cache,
                        Rng* aug_rng, const datasets::AugmentPolicy* policy) {
    EpisodeData data;
    data.n_way = spec.n_way;
    data.k_shot = spec.k_shot;
    data.n_query = spec.n_query;
    auto fetch = [&](int idx) {
        const Matrix& img = cache.get(idx);
        if (aug_rng && policy) return datasets::augment(img, *aug_rng, *policy);
        return img;
    };
    data.support.resize(spec.n_way);
    for (int c = 0; c < spec.n_way; ++c) {
        for (int idx : spec.support[c]) data.support[c].push_back(fetch(idx));
        for (int idx : spec.query[c]) {
            data.queries.push_back(fetch(idx));
            data.query_labels.push_back(c);
        }
    }
    return data;
}

EvalReport evaluate(AmsfNet& model, const episodes::DatasetManifest& m, const ImageCache& cache,
                    Split split, const EvalConfig& cfg, const std::string& fingerprint) {
    EvalReport report;
    report.config_fingerprint = fingerprint;
    report.confusion = Eigen::MatrixXi::Zero(cfg.n_way, cfg.n_way);
    episodes::EpisodeBatcher batcher(m, split, cfg.n_way, cfg.k_shot, cfg.n_query, cfg.episodes,
                                     cfg.seed);
    episodes::EpisodeSpec spec;
    ad::Tape tape;
    while (batcher.next(spec)) {
        tape.reset();
        EpisodeData data = materialize(spec, cache);
        EpisodeForward fwd = model.episode_forward(tape, data);
        int correct = 0;
        for (size_t qi = 0; qi < data.query_labels.size(); ++qi) {
            const int truth = data.query_labels[qi];
            const int pred = fwd.predicted[qi];
            report.confusion(truth, pred) += 1;
            if (pred == truth) ++correct;
        }
        report.per_episode_accuracy.push_back(static_cast<double>(correct) /
                                              data.query_labels.size());
    }
    report.episodes = static_cast<int>(report.per_episode_accuracy.size());
    if (report.episodes > 0) {
        auto [mean, ci] = mean_ci(report.per_episode_accuracy);
        report.mean_accuracy = mean;
        report.ci_half_width = ci;
    }
    report.precision.assign(cfg.n_way, 0.0);
    report.recall.assign(cfg.n_way, 0.0);
    for (int c = 0; c < cfg.n_way; ++c) {
        const double col = report.confusion.col(c).sum();
        const double row = report.confusion.row(c).sum();
        report.precision[c] = col > 0 ? report.confusion(c, c) / col : 0.0;
        report.recall[c] = row > 0 ? report.confusion(c, c) / row : 0.0;
    }
    return report;
}

namespace {

std::vector<Matrix> snapshot_params(ParamStore& store) {
    std::vector<Matrix> snap;
    for (const auto& p : store) snap.push_back(p.value);
    return snap;
}

void restore_params(ParamStore& store, const std::vector<Matrix>& snap) {
    size_t i = 0;
    for (auto& p : store) p.value = snap[i++];
}

}  // namespace

TrainResult train(AmsfNet& model, const episodes::DatasetManifest& m, const ImageCache& cache,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const std::string& fingerprint) {
    validate(cfg);
    TrainResult result;
    std::ofstream metrics;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics.open(out_dir / "metrics.csv");
        metrics << "episode,lr,loss,val_accuracy\n";
    }

    episodes::EpisodeBatcher batcher(m, Split::Train, cfg.n_way, cfg.k_shot, cfg.n_query,
                                     cfg.total_episodes, datasets::mix_seed(cfg.seed, 0xE9150DE5));
    Rng aug_rng(datasets::mix_seed(cfg.seed, 0xA06));
    Rng dropout_rng(datasets::mix_seed(cfg.seed, 0xD809));
    const uint64_t val_seed = datasets::mix_seed(cfg.seed, 0x7A1);
    AdamW opt;

    std::vector<Matrix> best_snapshot;
    episodes::EpisodeSpec spec;
    ad::Tape tape;
    int episode = 0;
    while (batcher.next(spec)) {
        tape.reset();
        EpisodeData data = materialize(spec, cache, cfg.augment ? &aug_rng : nullptr,
                                       cfg.augment ? &cfg.augment_policy : nullptr);
        EpisodeForward fwd = model.episode_forward(tape, data, true, &dropout_rng);
        const double loss = fwd.loss.value()(0, 0);
        if (!std::isfinite(loss)) {
            if (!out_dir.empty()) {
                nlohmann::json dump;
                dump["episode"] = episode;
                dump["lr"] = lr_at(cfg, episode);
                dump["recent_losses"] = std::vector<double>(
                    result.losses.end() - std::min<size_t>(result.losses.size(), 20),
                    result.losses.end());
                std::ofstream(out_dir / "nan_dump.json") << dump.dump(2) << "\n";
            }
            throw std::runtime_error("train: non-finite loss at episode " +
                                     std::to_string(episode));
        }
        model.store().zero_grads();
        tape.backward(fwd.loss);
        const double lr = lr_at(cfg, episode);
        opt.step(model.store(), lr, cfg.weight_decay);
        result.losses.push_back(loss);
        if (metrics.is_open()) {
            metrics << episode << ',' << lr << ',' << loss << ",\n";
        }

        if (cfg.val_interval > 0 && cfg.val_episodes > 0 &&
            (episode + 1) % cfg.val_interval == 0) {
            EvalConfig vcfg{cfg.n_way, cfg.k_shot, cfg.n_query, cfg.val_episodes, val_seed};
            const double acc =
                evaluate(model, m, cache, Split::Val, vcfg, fingerprint).mean_accuracy;
            result.used_validation = true;
            if (acc > result.best_val_accuracy) {
                result.best_val_accuracy = acc;
                result.best_episode = episode;
                best_snapshot = snapshot_params(model.store());
            }
            if (metrics.is_open()) {
                metrics << episode << ',' << lr << ",," << acc << "\n";
            }
        }
        ++episode;
    }
    if (result.used_validation && !best_snapshot.empty()) {
        restore_params(model.store(), best_snapshot);
    }

    if (!out_dir.empty()) {
        io::save_checkpoint(out_dir / "checkpoint.bin", model.store(), fingerprint);
        nlohmann::json summary;
        summary["episodes"] = episode;
        summary["final_loss"] = result.losses.empty() ? 0.0 : result.losses.back();
        summary["best_val_accuracy"] = result.best_val_accuracy;
        summary["best_episode"] = result.best_episode;
        summary["used_validation"] = result.used_validation;
        summary["config_fingerprint"] = fingerprint;
        std::ofstream(out_dir / "summary.json") << summary.dump(2) << "\n";
    }
    return result;
}

double median(std::vector<double> v) {
    require(!v.empty(), "median: empty");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::pair<double, double> mean_ci(const std::vector<double>& values) {
    require(!values.empty(), "mean_ci: empty");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (values.size() - 1));
    return {mean, 1.96 * sd / std::sqrt(static_cast<double>(values.size()))};
}

std::vector<AblationRow> run_ablation(const std::string& axis, const std::vector<int>& grid,
                                      const ModelConfig& base_model, const TrainConfig& tcfg,
                                      const EvalConfig& ecfg, const episodes::DatasetManifest& m,
                                      const ImageCache& cache,
                                      const std::vector<uint64_t>& seeds,
                                      const std::filesystem::path& out_dir) {
    struct Point {
        std::string label;
        ModelConfig cfg;
    };
    std::vector<Point> points;
    if (axis == "modules") {
        const std::pair<const char*, std::pair<bool, bool>> rows[] = {
            {"baseline", {false, false}},
            {"amff", {true, false}},
            {"acasff", {false, true}},
            {"full", {true, true}},
        };
        for (const auto& [label, flags] : rows) {
            ModelConfig c = base_model;
            c.use_amff = flags.first;
            c.use_acasff = flags.second;
            points.push_back({label, c});
        }
    } else if (axis == "insertion_depth") {
        for (int layer : grid) {
            ModelConfig c = base_model;
            c.backbone.insertion_layer = layer;
            points.push_back({"layer" + std::to_string(layer), c});
        }
    } else if (axis == "dwt_level") {
        for (int level : grid) {
            ModelConfig c = base_model;
            c.amff.dwt_levels = level;
            points.push_back({"L" + std::to_string(level), c});
        }
    } else {
        throw ConfigError("run_ablation: unknown axis " + axis);
    }
    if (points.empty()) throw ConfigError("run_ablation: empty grid");
    if (seeds.empty()) throw ConfigError("run_ablation: need at least one seed");

    std::vector<AblationRow> rows;
    for (const auto& pt : points) {
        AblationRow row;
        row.label = pt.label;
        for (uint64_t seed : seeds) {
            ModelConfig mc = pt.cfg;
            mc.init_seed = seed;
            TrainConfig tc = tcfg;
            tc.seed = seed;
            AmsfNet model(mc);
            train(model, m, cache, tc);
            row.per_seed_accuracy.push_back(
                evaluate(model, m, cache, Split::Test, ecfg).mean_accuracy);
        }
        row.median_accuracy = median(row.per_seed_accuracy);
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) {
        return a.median_accuracy > b.median_accuracy;
    });
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream out(out_dir / ("ablation_" + axis + ".csv"));
        out << "label,median_accuracy";
        for (size_t s = 0; s < seeds.size(); ++s) out << ",seed" << seeds[s];
        out << "\n";
        for (const auto& r : rows) {
            out << r.label << ',' << r.median_accuracy;
            for (double a : r.per_seed_accuracy) out << ',' << a;
            out << "\n";
        }
    }
    return rows;
}

void export_embeddings(AmsfNet& model, const episodes::DatasetManifest& m,
                       const ImageCache& cache, Split split, int count,
                       const std::filesystem::path& out_file) {
    std::ofstream out(out_file);
    if (!out) throw DataError("cannot write embeddings: " + out_file.string());
    const int d = model.config().backbone.d_model;
    out << "item_id\tpatient_id\tlabel";
    for (int j = 0; j < d; ++j) out << "\tf" << j;
    out << "\n";
    int written = 0;
    ad::Tape tape;
    char buf[32];
    for (int i = 0; i < static_cast<int>(m.items.size()); ++i) {
        if (m.items[i].split != split) continue;
        if (count >= 0 && written >= count) break;
        tape.reset();
        ad::Var emb = model.pooled_embedding(tape, cache.get(i));
        const Matrix& e = emb.value();
        out << m.items[i].item_id << '\t' << m.items[i].patient_id << '\t'
            << m.items[i].class_label;
        for (int j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", e(0, j));
            out << '\t' << buf;
        }
        out << "\n";
        ++written;
    }
}

}  // namespace amsf::harness
