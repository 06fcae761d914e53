#include "amsf/model.hpp"

#include <cmath>

namespace amsf {

using ad::Tape;
using ad::Var;

ModelConfig validated(ModelConfig cfg) {
    if (cfg.head != "ridge" && cfg.head != "proto") {
        throw ConfigError("model: head must be 'ridge' or 'proto'");
    }
    if (cfg.backbone.image_size % (1 << cfg.amff.dwt_levels) != 0) {
        throw ConfigError("model: image_size must be divisible by 2^dwt_levels");
    }
    return cfg;
}

AmsfNet::AmsfNet(ModelConfig cfg) : cfg_(validated(std::move(cfg))) {
    Rng rng(cfg_.init_seed);
    cfg_.amff.adaptive = cfg_.use_amff;
    amff_ = amff::init_amff_params(store_, cfg_.amff, rng);
    bb_ = backbone::init_backbone_params(store_, cfg_.backbone, 1, 1, rng);
    fuse_ = acasff::init_acasff_params(store_, cfg_.backbone.d_model, cfg_.acasff, rng);
    sim_ = similarity::init_similarity_params(store_, cfg_.similarity);
}

Var AmsfNet::features(Tape& tape, const Matrix& image, bool training, Rng* dropout_rng,
                      ForwardTrace* trace) {
    require(image.rows() == cfg_.backbone.image_size && image.cols() == cfg_.backbone.image_size,
            "features: image does not match configured input size");

    amff::GateTrace gate_trace;
    amff::AmffOutput front =
        amff::amff_forward(tape, image, cfg_.amff, amff_, trace ? &gate_trace : nullptr);
    if (trace) {
        for (const auto& g : gate_trace.directional) {
            trace->directional_gate_sums.push_back(g.sum());
            trace->directional_gate_mins.push_back(g.minCoeff());
        }
        trace->scale_gate_sums.push_back(gate_trace.scale.sum());
        trace->scale_gate_mins.push_back(gate_trace.scale.minCoeff());
    }

    Var ll_pixels = flatten_image(front.low);
    Var hf_pixels = flatten_image(front.high);

    backbone::FuseHook hook;
    if (cfg_.use_acasff) {
        hook = [this, trace](Tape& t, const backbone::TokenSequence& seq) {
            Eigen::Vector2d w;
            auto out = acasff::fuse_block(t, seq, fuse_, cfg_.acasff, cfg_.backbone.heads,
                                          trace ? &trace->attention : nullptr, &w);
            if (trace) {
                trace->fusion_weight_sums.push_back(w.sum());
                trace->fusion_weight_mins.push_back(w.minCoeff());
            }
            return out;
        };
    }
    backbone::TokenSequence seq =
        backbone::backbone_forward(tape, ll_pixels, hf_pixels, bb_, cfg_.backbone, hook,
                                   training, dropout_rng, trace ? &trace->attention : nullptr);
    return rows(seq.tokens, 1, seq.n_spatial + seq.n_freq);
}

Var AmsfNet::pooled_embedding(Tape& tape, const Matrix& image, bool training, Rng* dropout_rng,
                              ForwardTrace* trace) {
    return mean_over_rows(features(tape, image, training, dropout_rng, trace));
}

EpisodeForward AmsfNet::episode_forward(Tape& tape, const EpisodeData& ep, bool training,
                                        Rng* dropout_rng, ForwardTrace* trace) {
    require(ep.n_way >= 2, "episode_forward: need at least 2 classes");
    require(static_cast<int>(ep.support.size()) == ep.n_way, "episode_forward: support/way mismatch");
    require(ep.queries.size() == ep.query_labels.size(), "episode_forward: query label mismatch");

    EpisodeForward out;
    const int n_query = static_cast<int>(ep.queries.size());
    out.probs.resize(n_query, ep.n_way);
    out.predicted.resize(n_query);

    if (cfg_.head == "proto") {
        std::vector<Var> prototypes;
        prototypes.reserve(ep.n_way);
        for (int c = 0; c < ep.n_way; ++c) {
            require(!ep.support[c].empty(), "episode_forward: empty support class");
            Var sum = pooled_embedding(tape, ep.support[c][0], training, dropout_rng, trace);
            for (size_t k = 1; k < ep.support[c].size(); ++k) {
                sum = add(sum, pooled_embedding(tape, ep.support[c][k], training, dropout_rng, trace));
            }
            prototypes.push_back(scale(sum, 1.0 / static_cast<double>(ep.support[c].size())));
        }
        Var loss_sum;
        for (int qi = 0; qi < n_query; ++qi) {
            Var q = pooled_embedding(tape, ep.queries[qi], training, dropout_rng, trace);
            Var scores;
            for (int c = 0; c < ep.n_way; ++c) {
                Var diff = sub(q, prototypes[c]);
                Var s = neg(sum_all(mul(diff, diff)));
                scores = c == 0 ? s : hcat(scores, s);
            }
            Var probs = softmax_rows(scores);
            const Matrix& pv = probs.value();
            out.probs.row(qi) = pv.row(0);
            if (trace) trace->prob_sums.push_back(pv.sum());
            int best = 0;
            for (int c = 1; c < ep.n_way; ++c)
                if (pv(0, c) > pv(0, best)) best = c;
            out.predicted[qi] = best;
            Var nll = neg(log(cols(probs, ep.query_labels[qi], 1)));
            loss_sum = qi == 0 ? nll : add(loss_sum, nll);
        }
        out.loss = scale(loss_sum, 1.0 / static_cast<double>(n_query));
        return out;
    }

    std::vector<Var> sbars;
    sbars.reserve(ep.n_way);
    for (int c = 0; c < ep.n_way; ++c) {
        require(!ep.support[c].empty(), "episode_forward: empty support class");
        std::vector<Var> shots;
        shots.reserve(ep.support[c].size());
        for (const Matrix& img : ep.support[c]) {
            shots.push_back(features(tape, img, training, dropout_rng, trace));
        }
        sbars.push_back(similarity::aggregate_support(tape, shots));
    }

    Var loss_sum;
    for (int qi = 0; qi < n_query; ++qi) {
        Var fq = l2_normalize_rows(features(tape, ep.queries[qi], training, dropout_rng, trace));
        auto cls = similarity::classify(tape, fq, sbars, sim_,
                                        trace ? &trace->prob_sums : nullptr);
        out.probs.row(qi) = cls.probs.value().row(0);
        out.predicted[qi] = cls.argmax;
        Var nll = neg(log(cols(cls.probs, ep.query_labels[qi], 1)));
        loss_sum = qi == 0 ? nll : add(loss_sum, nll);
    }
    out.loss = scale(loss_sum, 1.0 / static_cast<double>(n_query));
    return out;
}

}  // namespace amsf
