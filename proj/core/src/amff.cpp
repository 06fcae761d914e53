#include "amsf/amff.hpp"

#include <string>

namespace amsf::amff {

using ad::Tape;
using ad::Var;

AmffParams init_amff_params(ParamStore& store, const AmffConfig& cfg, Rng& rng) {
    if (cfg.dwt_levels < 1 || cfg.dwt_levels > 4) {
        throw ConfigError("amff: dwt_levels must be in 1..4");
    }
    if (cfg.gate_hidden_width < 1) throw ConfigError("amff: gate_hidden_width must be >= 1");
    const int h = cfg.gate_hidden_width;
    AmffParams p;
    for (int l = 1; l <= cfg.dwt_levels; ++l) {
        const std::string base = "amff.dir" + std::to_string(l) + ".";
        GateMlp m;
        m.w1 = &store.add(base + "w1", uniform_fan_in(3, h, rng));
        m.b1 = &store.add(base + "b1", Matrix::Zero(1, h));
        m.w2 = &store.add(base + "w2", uniform_fan_in(h, 3, rng));
        m.b2 = &store.add(base + "b2", Matrix::Zero(1, 3));
        p.directional.push_back(m);
    }
    const int L = cfg.dwt_levels;
    p.scale.w1 = &store.add("amff.scale.w1", uniform_fan_in(L, h, rng));
    p.scale.b1 = &store.add("amff.scale.b1", Matrix::Zero(1, h));
    p.scale.w2 = &store.add("amff.scale.w2", uniform_fan_in(h, L, rng));
    p.scale.b2 = &store.add("amff.scale.b2", Matrix::Zero(1, L));
    return p;
}

double global_average(const Matrix& map) {
    if (map.size() == 0) throw DimensionError("global_average: empty map");
    return map.mean();
}

Eigen::RowVector3d directional_descriptors(const wavelet::DirectionalMaps& maps) {
    Eigen::RowVector3d d;
    d << global_average(maps.lh), global_average(maps.hl), global_average(maps.hh);
    return d;
}

Var gate_forward(Tape& tape, Var input_row, const GateMlp& mlp) {
    Var hidden = relu(linear(input_row, tape.param(*mlp.w1), tape.param(*mlp.b1)));
    Var logits = linear(hidden, tape.param(*mlp.w2), tape.param(*mlp.b2));
    return softmax_rows(logits);
}

Var directional_gate(Tape& tape, Var descriptors, const GateMlp& mlp) {
    require(descriptors.rows() == 1 && descriptors.cols() == 3,
            "directional_gate: descriptors must be 1x3");
    return gate_forward(tape, descriptors, mlp);
}

Var fuse_directions(Tape& tape, Var gate, Var rlh, Var rhl, Var rhh) {
    require(gate.rows() == 1 && gate.cols() == 3, "fuse_directions: gate must be 1x3");
    require(rlh.rows() == rhl.rows() && rlh.cols() == rhl.cols() &&
                rlh.rows() == rhh.rows() && rlh.cols() == rhh.cols(),
            "fuse_directions: map shapes differ");
    Var fused = mul(cols(gate, 0, 1), rlh);
    fused = add(fused, mul(cols(gate, 1, 1), rhl));
    fused = add(fused, mul(cols(gate, 2, 1), rhh));
    return fused;
}

Var scale_gate(Tape& tape, Var descriptors, const GateMlp& mlp) {
    require(descriptors.rows() == 1, "scale_gate: descriptors must be a row");
    return gate_forward(tape, descriptors, mlp);
}

Var fuse_scales(Tape& tape, Var eta, const std::vector<Var>& maps) {
    require(!maps.empty(), "fuse_scales: no maps");
    require(eta.rows() == 1 && eta.cols() == static_cast<long>(maps.size()),
            "fuse_scales: eta width must match level count");
    Var out = mul(cols(eta, 0, 1), maps[0]);
    for (size_t l = 1; l < maps.size(); ++l) {
        require(maps[l].rows() == maps[0].rows() && maps[l].cols() == maps[0].cols(),
                "fuse_scales: map shapes differ");
        out = add(out, mul(cols(eta, static_cast<int>(l), 1), maps[l]));
    }
    return out;
}

AmffOutput amff_forward(Tape& tape, const Matrix& image, const AmffConfig& cfg,
                        const AmffParams& params, GateTrace* trace) {
    const int L = cfg.dwt_levels;
    require(static_cast<int>(params.directional.size()) == L,
            "amff_forward: params built for a different level count");
    wavelet::SubbandPyramid pyr = wavelet::dwt_cascade(image, L);

    std::vector<Var> fused_levels;
    fused_levels.reserve(L);
    std::vector<Var> scale_descs;
    if (trace) trace->directional.clear();
    for (int l = 1; l <= L; ++l) {
        wavelet::DirectionalMaps maps = wavelet::idwt_directional(pyr, l);
        Var gate;
        if (cfg.adaptive) {
            Var desc = tape.leaf(directional_descriptors(maps));
            gate = directional_gate(tape, desc, params.directional[l - 1]);
        } else {
            gate = tape.leaf(Matrix::Constant(1, 3, 1.0 / 3.0));
        }
        if (trace) trace->directional.push_back(gate.value().row(0).transpose());
        Var fused = fuse_directions(tape, gate, tape.leaf(maps.lh), tape.leaf(maps.hl),
                                    tape.leaf(maps.hh));
        scale_descs.push_back(mean_all(fused));
        fused_levels.push_back(fused);
    }

    Var s = scale_descs[0];
    for (int l = 1; l < L; ++l) s = hcat(s, scale_descs[l]);
    Var eta = cfg.adaptive ? scale_gate(tape, s, params.scale)
                           : tape.leaf(Matrix::Constant(1, L, 1.0 / L));
    if (trace) trace->scale = eta.value().row(0).transpose();

    AmffOutput out;
    out.high = fuse_scales(tape, eta, fused_levels);
    out.low = tape.leaf(wavelet::idwt_lowpass(pyr, 1));
    return out;
}

}  // namespace amsf::amff
