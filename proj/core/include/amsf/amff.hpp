#pragma once

#include <vector>

#include "amsf/autodiff.hpp"
#include "amsf/params.hpp"
#include "amsf/wavelet.hpp"

namespace amsf::amff {

struct AmffConfig {
    int dwt_levels = 3;
    int gate_hidden_width = 16;
    bool adaptive = true;  // false freezes all gates at uniform weights
};

/// One-hidden-layer gate network: softmax(relu(x W1 + b1) W2 + b2).
struct GateMlp {
    Parameter *w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;
};

struct AmffParams {
    std::vector<GateMlp> directional;  // per level, 3 -> hidden -> 3
    GateMlp scale;                     // L -> hidden -> L
};

AmffParams init_amff_params(ParamStore& store, const AmffConfig& cfg, Rng& rng);

/// Global 2D average of one directional map. Throws on empty input.
double global_average(const Matrix& map);

/// Descriptor triple (d_LH, d_HL, d_HH) in fixed order.
Eigen::RowVector3d directional_descriptors(const wavelet::DirectionalMaps& maps);

ad::Var gate_forward(ad::Tape& tape, ad::Var input_row, const GateMlp& mlp);

/// (alpha, beta, gamma) from the descriptor triple; softmax-normalized 1x3.
ad::Var directional_gate(ad::Tape& tape, ad::Var descriptors, const GateMlp& mlp);

/// alpha*LH + beta*HL + gamma*HH, elementwise. gate is 1x3.
ad::Var fuse_directions(ad::Tape& tape, ad::Var gate, ad::Var rlh, ad::Var rhl, ad::Var rhh);

/// (eta_1..eta_L) from scale descriptors; softmax-normalized 1xL.
ad::Var scale_gate(ad::Tape& tape, ad::Var descriptors, const GateMlp& mlp);

/// Sum_l eta_l * map_l. eta is 1xL.
ad::Var fuse_scales(ad::Tape& tape, ad::Var eta, const std::vector<ad::Var>& maps);

struct GateTrace {
    std::vector<Eigen::Vector3d> directional;  // per level
    Eigen::VectorXd scale;
};

struct AmffOutput {
    ad::Var low;   // level-1 LL back-projection, input resolution
    ad::Var high;  // fused high-frequency map, input resolution
};

/// Full front end: cascade, per-direction back-projection, directional and
/// scale gating, low-frequency preservation. Output maps share the input dims.
AmffOutput amff_forward(ad::Tape& tape, const Matrix& image, const AmffConfig& cfg,
                        const AmffParams& params, GateTrace* trace = nullptr);

}  // namespace amsf::amff
