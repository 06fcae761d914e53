#pragma once

#include <string>
#include <vector>

#include "amsf/acasff.hpp"
#include "amsf/amff.hpp"
#include "amsf/backbone.hpp"
#include "amsf/similarity.hpp"

namespace amsf {

struct ModelConfig {
    amff::AmffConfig amff;
    backbone::BackboneConfig backbone;
    acasff::AcasffConfig acasff;
    similarity::SimilarityConfig similarity;
    bool use_amff = true;     // off: fixed uniform direction/scale gates
    bool use_acasff = true;   // off: no fusion block at the insertion point
    std::string head = "ridge";  // "ridge" or "proto"
    uint64_t init_seed = 42;
};

/// Softmax outputs observed during forward passes, for invariant checks.
struct ForwardTrace {
    std::vector<double> directional_gate_sums;
    std::vector<double> directional_gate_mins;
    std::vector<double> scale_gate_sums;
    std::vector<double> scale_gate_mins;
    std::vector<double> fusion_weight_sums;
    std::vector<double> fusion_weight_mins;
    std::vector<double> prob_sums;
    ad::AttentionStats attention;
};

/// One episode's image tensors with episode-local labels.
struct EpisodeData {
    int n_way = 0, k_shot = 0, n_query = 0;
    std::vector<std::vector<Matrix>> support;  // [class][shot]
    std::vector<Matrix> queries;
    std::vector<int> query_labels;             // 0..n_way-1
};

struct EpisodeForward {
    ad::Var loss;
    Matrix probs;                    // queries x n_way
    std::vector<int> predicted;
};

class AmsfNet {
public:
    explicit AmsfNet(ModelConfig cfg);

    /// Patch-token feature map of one image: (n_spatial + n_freq) x d_model,
    /// CLS excluded, rows unnormalized.
    ad::Var features(ad::Tape& tape, const Matrix& image, bool training = false,
                     Rng* dropout_rng = nullptr, ForwardTrace* trace = nullptr);

    /// Pooled d_model embedding (token mean) of one image.
    ad::Var pooled_embedding(ad::Tape& tape, const Matrix& image, bool training = false,
                             Rng* dropout_rng = nullptr, ForwardTrace* trace = nullptr);

    EpisodeForward episode_forward(ad::Tape& tape, const EpisodeData& episode,
                                   bool training = false, Rng* dropout_rng = nullptr,
                                   ForwardTrace* trace = nullptr);

    ParamStore& store() { return store_; }
    const ModelConfig& config() const { return cfg_; }
    const similarity::SimilarityParams& similarity_params() const { return sim_; }

private:
    ModelConfig cfg_;
    ParamStore store_;
    amff::AmffParams amff_;
    backbone::BackboneParams bb_;
    acasff::AcasffParams fuse_;
    similarity::SimilarityParams sim_;
};

ModelConfig validated(ModelConfig cfg);

}  // namespace amsf
