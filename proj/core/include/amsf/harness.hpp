#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "amsf/datasets.hpp"
#include "amsf/episodes.hpp"
#include "amsf/model.hpp"

namespace amsf::harness {

struct TrainConfig {
    double lr = 2e-5;
    double weight_decay = 5e-5;
    int total_episodes = 2000;
    std::vector<int> milestones = {375, 625, 875, 1125, 1375};
    double decay_factor = 0.5;
    int warmup_episodes = 75;
    int n_way = 4, k_shot = 5, n_query = 15;
    uint64_t seed = 1;
    int val_interval = 250;
    int val_episodes = 50;
    bool augment = true;
    datasets::AugmentPolicy augment_policy;
};

void validate(const TrainConfig& cfg);

/// Closed-form schedule: linear warm-up to lr, then one decay factor per
/// milestone at or before the episode.
double lr_at(const TrainConfig& cfg, int episode);

/// Mean negative log probability of the true class. Rows must sum to 1
/// within 1e-6.
double episodic_loss(const Matrix& probs, const std::vector<int>& labels);

/// Eagerly loads every manifest image under root into memory.
class ImageCache {
public:
    ImageCache(const episodes::DatasetManifest& m, const std::filesystem::path& root);
    const Matrix& get(int manifest_index) const { return images_.at(manifest_index); }
    size_t size() const { return images_.size(); }

private:
    std::vector<Matrix> images_;
};

/// Turns sampled indices into image tensors; augments when aug_rng is given.
EpisodeData materialize(const episodes::EpisodeSpec& spec, const ImageCache& cache,
                        Rng* aug_rng = nullptr,
                        const datasets::AugmentPolicy* policy = nullptr);

struct EvalConfig {
    int n_way = 4, k_shot = 5, n_query = 15;
    int episodes = 500;
    uint64_t seed = 123;
};

struct EvalReport {
    double mean_accuracy = 0.0;
    double ci_half_width = 0.0;  // 1.96 * sd / sqrt(episodes), sd with n-1
    int episodes = 0;
    Eigen::MatrixXi confusion;   // row = true episode-local label
    std::vector<double> precision, recall;
    std::vector<double> per_episode_accuracy;
    std::string config_fingerprint;
};

EvalReport evaluate(AmsfNet& model, const episodes::DatasetManifest& m, const ImageCache& cache,
                    episodes::Split split, const EvalConfig& cfg,
                    const std::string& fingerprint = "");

struct TrainResult {
    std::vector<double> losses;
    double best_val_accuracy = -1.0;
    int best_episode = -1;
    bool used_validation = false;
};

/// Episodic training with per-episode optimizer steps. When out_dir is
/// nonempty, writes metrics.csv, summary.json and checkpoint.bin there; the
/// retained checkpoint is the best validation one when validation ran.
TrainResult train(AmsfNet& model, const episodes::DatasetManifest& m, const ImageCache& cache,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
                  const std::string& fingerprint = "");

struct AblationRow {
    std::string label;
    std::vector<double> per_seed_accuracy;
    double median_accuracy = 0.0;
};

/// axis: "modules" (baseline / amff / acasff / full), "insertion_depth"
/// (grid of insertion layers) or "dwt_level" (grid of level counts). Each
/// grid point is trained and evaluated once per seed; rows come back ranked
/// by median accuracy.
std::vector<AblationRow> run_ablation(const std::string& axis, const std::vector<int>& grid,
                                      const ModelConfig& base_model, const TrainConfig& tcfg,
                                      const EvalConfig& ecfg, const episodes::DatasetManifest& m,
                                      const ImageCache& cache,
                                      const std::vector<uint64_t>& seeds,
                                      const std::filesystem::path& out_dir = {});

/// One row per item of the split (first `count`, all when count < 0):
/// item_id, patient_id, label, then the pooled d_model feature vector.
void export_embeddings(AmsfNet& model, const episodes::DatasetManifest& m,
                       const ImageCache& cache, episodes::Split split, int count,
                       const std::filesystem::path& out_file);

double median(std::vector<double> v);

/// (mean, 1.96 * sd / sqrt(n)) with the n-1 variance estimator; half-width 0
/// for fewer than two values.
std::pair<double, double> mean_ci(const std::vector<double>& values);

}  // namespace amsf::harness
