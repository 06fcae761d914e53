#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "amsf/autodiff.hpp"
#include "amsf/params.hpp"

namespace amsf::backbone {

struct BackboneConfig {
    int d_model = 64;
    int depth = 4;
    int heads = 4;
    int patch_size = 8;
    int insertion_layer = 3;   // fusion runs after this many encoder blocks
    double dropout_rate = 0.0;
    int proj_channels = 4;     // width of each domain projection head
    int image_size = 32;
    int mlp_ratio = 4;
};

struct BlockParams {
    Parameter *ln1_g, *ln1_b;
    Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Parameter *ln2_g, *ln2_b;
    Parameter *mlp_w1, *mlp_b1, *mlp_w2, *mlp_b2;
};

struct BackboneParams {
    Parameter *proj_s_w, *proj_s_b;    // pointwise projection heads (1x1 conv)
    Parameter *proj_f_w, *proj_f_b;
    Parameter *embed_s_w, *embed_s_b;  // per-domain patch embeddings
    Parameter *embed_f_w, *embed_f_b;
    Parameter *cls;                    // 1 x d
    Parameter *pos;                    // (1 + ts + tf) x d
    std::vector<BlockParams> blocks;
    Parameter *ln_f_g, *ln_f_b;        // final layer norm
};

BackboneParams init_backbone_params(ParamStore& store, const BackboneConfig& cfg,
                                    int ll_channels, int hf_channels, Rng& rng);

/// Row 0 is the CLS token; rows [1, 1+n_spatial) are spatial-domain tokens,
/// the rest frequency-domain tokens. The layout is the domain tag and never
/// changes through encoder blocks.
struct TokenSequence {
    ad::Var tokens;
    int n_spatial = 0;
    int n_freq = 0;
    int grid_h = 0, grid_w = 0;

    int spatial_first() const { return 1; }
    int freq_first() const { return 1 + n_spatial; }
    int total() const { return 1 + n_spatial + n_freq; }
};

/// Pointwise projection of the two channel groups into the shared width.
/// Inputs are pixels-as-rows: (H*W) x channels.
std::pair<ad::Var, ad::Var> project_domains(ad::Tape& tape, ad::Var ll_pixels,
                                            ad::Var hf_pixels, const BackboneParams& p);

/// Tokenizes the channel-concatenated projection (spatial group first) into
/// per-domain patch tokens, prepends CLS, adds positional encodings, applies
/// dropout in training mode.
TokenSequence embed(ad::Tape& tape, ad::Var concat_pixels, const BackboneParams& p,
                    const BackboneConfig& cfg, bool training, Rng* dropout_rng);

/// Pre-norm block: x + Wo(MHSA(LN(x))) then x + MLP(LN(x)).
ad::Var encoder_block(ad::Tape& tape, ad::Var tokens, const BlockParams& p, int heads,
                      ad::AttentionStats* stats = nullptr);

using FuseHook = std::function<TokenSequence(ad::Tape&, const TokenSequence&)>;

/// Blocks [0, insertion_layer), the fusion hook, the remaining blocks, and the
/// final layer norm.
TokenSequence backbone_forward(ad::Tape& tape, ad::Var ll_pixels, ad::Var hf_pixels,
                               const BackboneParams& p, const BackboneConfig& cfg,
                               const FuseHook& fuse, bool training, Rng* dropout_rng,
                               ad::AttentionStats* stats = nullptr);

}  // namespace amsf::backbone
