#include "amsf/wavelet.hpp"

#include <string>

namespace amsf::wavelet {

Subbands dwt_level(const Matrix& input) {
    const long h = input.rows(), w = input.cols();
    if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("dwt_level: dims must be even and >= 2, got " +
                             std::to_string(h) + "x" + std::to_string(w));
    }
    const long hh = h / 2, hw = w / 2;
    Subbands out{Matrix(hh, hw), Matrix(hh, hw), Matrix(hh, hw), Matrix(hh, hw)};
    for (long i = 0; i < hh; ++i) {
        for (long j = 0; j < hw; ++j) {
            const double a = input(2 * i, 2 * j);
            const double b = input(2 * i, 2 * j + 1);
            const double c = input(2 * i + 1, 2 * j);
            const double d = input(2 * i + 1, 2 * j + 1);
            out.ll(i, j) = 0.5 * (a + b + c + d);
            out.lh(i, j) = 0.5 * (a + b - c - d);
            out.hl(i, j) = 0.5 * (a - b + c - d);
            out.hh(i, j) = 0.5 * (a - b - c + d);
        }
    }
    return out;
}

Matrix idwt_level(const Subbands& sb) {
    const long hh = sb.ll.rows(), hw = sb.ll.cols();
    require(sb.lh.rows() == hh && sb.lh.cols() == hw &&
                sb.hl.rows() == hh && sb.hl.cols() == hw &&
                sb.hh.rows() == hh && sb.hh.cols() == hw,
            "idwt_level: subband shapes differ");
    Matrix out(2 * hh, 2 * hw);
    for (long i = 0; i < hh; ++i) {
        for (long j = 0; j < hw; ++j) {
            const double ll = sb.ll(i, j), lh = sb.lh(i, j);
            const double hl = sb.hl(i, j), hhv = sb.hh(i, j);
            out(2 * i, 2 * j) = 0.5 * (ll + lh + hl + hhv);
            out(2 * i, 2 * j + 1) = 0.5 * (ll + lh - hl - hhv);
            out(2 * i + 1, 2 * j) = 0.5 * (ll - lh + hl - hhv);
            out(2 * i + 1, 2 * j + 1) = 0.5 * (ll - lh - hl + hhv);
        }
    }
    return out;
}

Matrix reflect_pad(const Matrix& input, int rows, int cols) {
    const long h = input.rows(), w = input.cols();
    require(rows >= h && cols >= w, "reflect_pad: target smaller than input");
    if (rows == h && cols == w) return input;
    Matrix out(rows, cols);
    for (long i = 0; i < rows; ++i) {
        // mirror index with edge sample repeated: h, h+1, ... -> h-1, h-2, ...
        long si = i < h ? i : 2 * h - 1 - i;
        require(si >= 0, "reflect_pad: padding exceeds input extent");
        for (long j = 0; j < cols; ++j) {
            long sj = j < w ? j : 2 * w - 1 - j;
            require(sj >= 0, "reflect_pad: padding exceeds input extent");
            out(i, j) = input(si, sj);
        }
    }
    return out;
}

SubbandPyramid dwt_cascade(const Matrix& input, int levels) {
    if (levels < 1 || levels > 4) {
        throw ConfigError("dwt_cascade: levels must be in 1..4, got " + std::to_string(levels));
    }
    SubbandPyramid pyr;
    pyr.levels = levels;
    pyr.rows = static_cast<int>(input.rows());
    pyr.cols = static_cast<int>(input.cols());
    require(pyr.rows >= 2 && pyr.cols >= 2, "dwt_cascade: input too small");
    const int mult = 1 << levels;
    pyr.padded_rows = round_up(pyr.rows, mult);
    pyr.padded_cols = round_up(pyr.cols, mult);
    Matrix ll = reflect_pad(input, pyr.padded_rows, pyr.padded_cols);
    pyr.coeffs.reserve(levels);
    for (int l = 0; l < levels; ++l) {
        pyr.coeffs.push_back(dwt_level(ll));
        ll = pyr.coeffs.back().ll;
    }
    return pyr;
}

Matrix reconstruct(const SubbandPyramid& pyr) {
    require(!pyr.coeffs.empty(), "reconstruct: empty pyramid");
    Matrix ll = pyr.coeffs.back().ll;
    for (int l = pyr.levels - 1; l >= 0; --l) {
        Subbands sb = pyr.coeffs[l];
        sb.ll = ll;
        ll = idwt_level(sb);
    }
    return ll.topLeftCorner(pyr.rows, pyr.cols);
}

namespace {

Matrix synthesize_from_band(const Matrix& band, Band which, int level) {
    const long h = band.rows(), w = band.cols();
    Matrix cur;
    {
        Subbands sb{Matrix::Zero(h, w), Matrix::Zero(h, w),
                    Matrix::Zero(h, w), Matrix::Zero(h, w)};
        switch (which) {
            case Band::LL: sb.ll = band; break;
            case Band::LH: sb.lh = band; break;
            case Band::HL: sb.hl = band; break;
            case Band::HH: sb.hh = band; break;
        }
        cur = idwt_level(sb);
    }
    // remaining steps: the partial reconstruction rides the LL slot alone
    for (int l = level - 1; l >= 1; --l) {
        Subbands sb{cur, Matrix::Zero(cur.rows(), cur.cols()),
                    Matrix::Zero(cur.rows(), cur.cols()),
                    Matrix::Zero(cur.rows(), cur.cols())};
        cur = idwt_level(sb);
    }
    return cur;
}

}  // namespace

Matrix idwt_single_band(const Matrix& band, Band which, int level,
                        int target_rows, int target_cols) {
    require(level >= 1 && level <= 4, "idwt_single_band: level must be in 1..4");
    const int scale = 1 << level;
    const long full_r = band.rows() * scale, full_c = band.cols() * scale;
    if (full_r < target_rows || full_c < target_cols ||
        full_r != round_up(target_rows, scale) || full_c != round_up(target_cols, scale)) {
        throw DimensionError("idwt_single_band: band " + std::to_string(band.rows()) + "x" +
                             std::to_string(band.cols()) + " inconsistent with level " +
                             std::to_string(level) + " target " + std::to_string(target_rows) +
                             "x" + std::to_string(target_cols));
    }
    Matrix full = synthesize_from_band(band, which, level);
    return full.topLeftCorner(target_rows, target_cols);
}

DirectionalMaps idwt_directional(const Matrix& lh, const Matrix& hl, const Matrix& hh,
                                 int level, int target_rows, int target_cols) {
    require(lh.rows() == hl.rows() && lh.cols() == hl.cols() &&
                lh.rows() == hh.rows() && lh.cols() == hh.cols(),
            "idwt_directional: subband shapes differ");
    DirectionalMaps out;
    out.lh = idwt_single_band(lh, Band::LH, level, target_rows, target_cols);
    out.hl = idwt_single_band(hl, Band::HL, level, target_rows, target_cols);
    out.hh = idwt_single_band(hh, Band::HH, level, target_rows, target_cols);
    return out;
}

DirectionalMaps idwt_directional(const SubbandPyramid& pyr, int level) {
    require(level >= 1 && level <= pyr.levels, "idwt_directional: level out of range");
    const Subbands& sb = pyr.coeffs[level - 1];
    // band dims come from the cascade's 2^L padding; synthesize at padded size
    DirectionalMaps out;
    Matrix full = synthesize_from_band(sb.lh, Band::LH, level);
    out.lh = full.topLeftCorner(pyr.rows, pyr.cols);
    full = synthesize_from_band(sb.hl, Band::HL, level);
    out.hl = full.topLeftCorner(pyr.rows, pyr.cols);
    full = synthesize_from_band(sb.hh, Band::HH, level);
    out.hh = full.topLeftCorner(pyr.rows, pyr.cols);
    return out;
}

Matrix idwt_lowpass(const SubbandPyramid& pyr, int level) {
    require(level >= 1 && level <= pyr.levels, "idwt_lowpass: level out of range");
    Matrix full = synthesize_from_band(pyr.coeffs[level - 1].ll, Band::LL, level);
    return full.topLeftCorner(pyr.rows, pyr.cols);
}

std::vector<Matrix> concat_directions(const DirectionalMaps& maps) {
    require(maps.lh.rows() == maps.hl.rows() && maps.lh.cols() == maps.hl.cols() &&
                maps.lh.rows() == maps.hh.rows() && maps.lh.cols() == maps.hh.cols(),
            "concat_directions: shape mismatch");
    return {maps.lh, maps.hl, maps.hh};
}

}  // namespace amsf::wavelet
