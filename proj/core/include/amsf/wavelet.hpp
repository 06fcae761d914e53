#pragma once

#include <vector>

#include "amsf/common.hpp"

namespace amsf::wavelet {

// Orthonormal Haar analysis/synthesis. One analysis step halves both spatial
// dims; row index is the vertical axis. For a 2x2 block [[a,b],[c,d]]:
//   LL = (a+b+c+d)/2, LH = (a+b-c-d)/2, HL = (a-b+c-d)/2, HH = (a-b-c+d)/2.

enum class Band { LL, LH, HL, HH };

struct Subbands {
    Matrix ll, lh, hl, hh;
};

/// One analysis step. Input dims must both be even.
Subbands dwt_level(const Matrix& input);

/// Exact inverse of dwt_level.
Matrix idwt_level(const Subbands& sb);

struct SubbandPyramid {
    int levels = 0;
    int rows = 0, cols = 0;            // original (pre-padding) size
    int padded_rows = 0, padded_cols = 0;
    std::vector<Subbands> coeffs;      // coeffs[l-1] holds level-l subbands
};

/// L-level cascade, level l computed from the previous level's LL.
/// Inputs whose dims are not multiples of 2^L are reflect-padded first;
/// reconstructions crop back to the original size. levels must be in 1..4.
SubbandPyramid dwt_cascade(const Matrix& input, int levels);

/// Full synthesis of the coefficient set, cropped to the original size.
Matrix reconstruct(const SubbandPyramid& pyr);

/// Back-projects one level-l band to full resolution: l synthesis steps with
/// every other band zeroed at every step, then crop to (target_rows, target_cols).
/// The band must be sized padded/2^l for padded = next multiple of 2^l >= target.
Matrix idwt_single_band(const Matrix& band, Band which, int level,
                        int target_rows, int target_cols);

struct DirectionalMaps {
    Matrix lh, hl, hh;  // each at the target resolution
};

/// Per-direction back-projection of level-l high-frequency subbands.
DirectionalMaps idwt_directional(const Matrix& lh, const Matrix& hl, const Matrix& hh,
                                 int level, int target_rows, int target_cols);

/// Same, reading the bands and the padding geometry from a pyramid.
DirectionalMaps idwt_directional(const SubbandPyramid& pyr, int level);

/// LL-only back-projection of the given pyramid level.
Matrix idwt_lowpass(const SubbandPyramid& pyr, int level);

/// Channel concatenation in fixed (LH, HL, HH) order. Shapes must match.
std::vector<Matrix> concat_directions(const DirectionalMaps& maps);

/// Symmetric mirror padding (edge sample repeated) on the bottom/right edges.
Matrix reflect_pad(const Matrix& input, int rows, int cols);

inline int round_up(int n, int multiple) {
    return ((n + multiple - 1) / multiple) * multiple;
}

}  // namespace amsf::wavelet
