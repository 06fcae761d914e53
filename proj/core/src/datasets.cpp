#include "amsf/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "amsf/io.hpp"
#include "amsf/wavelet.hpp"

namespace amsf::datasets {

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = (a ^ (b * 0x9e3779b97f4a7c15ULL)) + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

std::vector<ClassRecipe> palette(const std::string& variant) {
    auto cr = [](int level, double lh, double hl, double hh, double amp, double noise,
                 double damp, std::vector<int> dlv, double rx, double ry) {
        ClassRecipe c;
        c.band_level = level;
        c.frac_lh = lh;
        c.frac_hl = hl;
        c.frac_hh = hh;
        c.texture_amp = amp;
        c.noise_amp = noise;
        c.distractor_amp = damp;
        c.distractor_levels = std::move(dlv);
        c.blob_rx = rx;
        c.blob_ry = ry;
        return c;
    };
    if (variant == "mixed") {
        return {
            cr(1, 0.10, 0.10, 0.80, 0.20, 0.02, 0.0, {}, 0.34, 0.30),
            cr(3, 0.70, 0.20, 0.10, 0.20, 0.02, 0.0, {}, 0.30, 0.34),
            cr(2, 0.15, 0.70, 0.15, 0.20, 0.02, 0.0, {}, 0.32, 0.32),
            cr(3, 0.10, 0.20, 0.70, 0.20, 0.02, 0.0, {}, 0.36, 0.28),
        };
    }
    if (variant == "freq") {
        return {
            cr(2, 0.80, 0.10, 0.10, 0.16, 0.03, 0.16, {1}, 0.34, 0.30),
            cr(2, 0.10, 0.80, 0.10, 0.16, 0.03, 0.16, {1}, 0.34, 0.30),
            cr(3, 0.10, 0.10, 0.80, 0.16, 0.03, 0.16, {1}, 0.34, 0.30),
            cr(3, 0.45, 0.45, 0.10, 0.16, 0.03, 0.16, {1}, 0.34, 0.30),
        };
    }
    if (variant == "level3") {
        const double t = 1.0 / 3;
        return {
            cr(3, 0.80, 0.10, 0.10, 0.16, 0.03, 0.16, {1, 2}, 0.34, 0.30),
            cr(3, 0.10, 0.80, 0.10, 0.16, 0.03, 0.16, {1, 2}, 0.34, 0.30),
            cr(3, 0.10, 0.10, 0.80, 0.16, 0.03, 0.16, {1, 2}, 0.34, 0.30),
            cr(3, t, t, t, 0.16, 0.03, 0.16, {1, 2}, 0.34, 0.30),
        };
    }
    throw ConfigError("unknown synthetic variant: " + variant);
}

bool same_band_params(const ClassRecipe& a, const ClassRecipe& b) {
    return a.band_level == b.band_level && a.frac_lh == b.frac_lh && a.frac_hl == b.frac_hl &&
           a.frac_hh == b.frac_hh;
}

struct PatientStyle {
    double base = 0.45;
    double amp_scale = 1.0;
    double radius_scale = 1.0;
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
};

PatientStyle draw_style(uint64_t seed) {
    Rng rng(seed);
    PatientStyle st;
    st.base = rng.uniform(0.38, 0.55);
    st.amp_scale = rng.uniform(0.92, 1.08);
    st.radius_scale = rng.uniform(0.92, 1.08);
    for (int k = 0; k < 3; ++k) {
        PatientStyle::Wave w;
        w.fx = rng.uniform(0.5, 2.0);
        w.fy = rng.uniform(0.5, 2.0);
        w.phase = rng.uniform(0.0, 2.0 * M_PI);
        w.amp = rng.uniform(0.02, 0.06);
        st.waves.push_back(w);
    }
    return st;
}

/// Band-limited texture with per-pixel variance ~1 and the requested
/// direction energy split, built by placing white coefficients at one level.
Matrix band_texture(int size, int level, double flh, double fhl, double fhh, Rng& rng) {
    const int scale = 1 << level;
    const int band = (size + scale - 1) / scale;
    auto draw = [&](double frac, wavelet::Band which) {
        Matrix coeffs(band, band);
        for (int i = 0; i < band; ++i)
            for (int j = 0; j < band; ++j) coeffs(i, j) = rng.normal();
        Matrix map = wavelet::idwt_single_band(coeffs, which, level, size, size);
        // synthesis spreads unit-energy coefficients over 4^level pixels
        return std::sqrt(frac) * scale * map;
    };
    Matrix tex = draw(flh, wavelet::Band::LH);
    tex += draw(fhl, wavelet::Band::HL);
    tex += draw(fhh, wavelet::Band::HH);
    return tex;
}

}  // namespace

SyntheticRecipe resolve_variant(SyntheticRecipe r) {
    if (r.classes < 2) throw ConfigError("synthetic recipe: need at least 2 classes");
    if (r.patients_per_class < 1 || r.images_per_patient < 1 || r.image_size < 8) {
        throw ConfigError("synthetic recipe: bad counts or image size");
    }
    if (r.class_recipes.empty()) {
        auto pal = palette(r.variant);
        for (int c = 0; c < r.classes; ++c) r.class_recipes.push_back(pal[c % pal.size()]);
        if (r.variant != "mixed") r.border = 0;
    }
    if (static_cast<int>(r.class_recipes.size()) != r.classes) {
        throw ConfigError("synthetic recipe: class_recipes count != classes");
    }
    bool any_differ = false;
    for (size_t i = 0; i + 1 < r.class_recipes.size() && !any_differ; ++i) {
        for (size_t j = i + 1; j < r.class_recipes.size(); ++j) {
            if (!same_band_params(r.class_recipes[i], r.class_recipes[j])) {
                any_differ = true;
                break;
            }
        }
    }
    if (!any_differ) {
        throw ConfigError("synthetic recipe: classes share identical frequency-band parameters");
    }
    return r;
}

episodes::DatasetManifest generate_synthetic(const SyntheticRecipe& recipe,
                                             const std::filesystem::path& out_dir) {
    const SyntheticRecipe r = resolve_variant(recipe);
    const int canvas = r.image_size + 2 * r.border;
    std::filesystem::create_directories(out_dir / "images");

    episodes::DatasetManifest manifest;
    char buf[128];
    for (int c = 0; c < r.classes; ++c) {
        const ClassRecipe& cls = r.class_recipes[c];
        for (int p = 0; p < r.patients_per_class; ++p) {
            const uint64_t pat_seed = mix_seed(mix_seed(r.seed, 0x5A1D + c), p + 1);
            const PatientStyle style = draw_style(pat_seed);
            for (int i = 0; i < r.images_per_patient; ++i) {
                Rng rng(mix_seed(pat_seed, 0xB10B + i));

                Matrix img = Matrix::Zero(canvas, canvas);
                const double cx = canvas / 2.0, cy = canvas / 2.0;
                const double tissue_rx = r.border > 0 ? r.image_size / 2.0 : 0.0;
                auto in_tissue = [&](int y, int x) {
                    if (r.border == 0) return true;
                    const double dx = (x - cx) / tissue_rx, dy = (y - cy) / tissue_rx;
                    return dx * dx + dy * dy <= 1.0;
                };
                for (int y = 0; y < canvas; ++y) {
                    for (int x = 0; x < canvas; ++x) {
                        if (!in_tissue(y, x)) continue;
                        double v = style.base;
                        for (const auto& w : style.waves) {
                            v += w.amp * std::cos(2.0 * M_PI * (w.fx * x + w.fy * y) / canvas +
                                                  w.phase);
                        }
                        img(y, x) = v;
                    }
                }

                const double bx = cx + rng.uniform(-0.05, 0.05) * canvas;
                const double by = cy + rng.uniform(-0.05, 0.05) * canvas;
                const double brx = cls.blob_rx * canvas * style.radius_scale;
                const double bry = cls.blob_ry * canvas * style.radius_scale;
                Matrix blob = Matrix::Zero(canvas, canvas);
                for (int y = 0; y < canvas; ++y) {
                    for (int x = 0; x < canvas; ++x) {
                        const double dx = (x - bx) / brx, dy = (y - by) / bry;
                        if (dx * dx + dy * dy <= 1.0 && in_tissue(y, x)) blob(y, x) = 1.0;
                    }
                }
                img += 0.12 * blob;

                Matrix tex = band_texture(canvas, cls.band_level, cls.frac_lh, cls.frac_hl,
                                          cls.frac_hh, rng);
                img += cls.texture_amp * style.amp_scale * tex.cwiseProduct(blob);

                if (cls.distractor_amp > 0.0) {
                    for (int dl : cls.distractor_levels) {
                        double u1 = rng.uniform(0.05, 1.0);
                        double u2 = rng.uniform(0.05, 1.0);
                        double u3 = rng.uniform(0.05, 1.0);
                        const double sum = u1 + u2 + u3;
                        Matrix dtex = band_texture(canvas, dl, u1 / sum, u2 / sum, u3 / sum, rng);
                        img += cls.distractor_amp * dtex.cwiseProduct(blob);
                    }
                }

                for (int y = 0; y < canvas; ++y) {
                    for (int x = 0; x < canvas; ++x) {
                        if (in_tissue(y, x)) {
                            img(y, x) = std::clamp(img(y, x) + rng.normal(0.0, cls.noise_amp),
                                                   0.0, 1.0);
                        }
                    }
                }

                std::snprintf(buf, sizeof(buf), "c%d_p%02d_i%02d", c, p, i);
                const std::string item_id = buf;
                const std::string rel = "images/" + item_id + ".pgm";
                io::write_pgm(out_dir / rel, img);
                std::snprintf(buf, sizeof(buf), "c%d_p%02d", c, p);
                manifest.items.push_back({item_id, rel, "class_" + std::to_string(c), buf,
                                          episodes::Split::Unassigned});
            }
        }
    }
    episodes::write_manifest(manifest, out_dir / "manifest.csv");
    return manifest;
}

Matrix preprocess(const Matrix& image, const PreprocessPolicy& policy) {
    require(image.size() > 0, "preprocess: empty image");
    if (policy.window_width <= 0.0) throw ConfigError("preprocess: window_width must be > 0");
    const double lo = policy.window_level - policy.window_width / 2.0;
    Matrix y = ((image.array() - lo) / policy.window_width).cwiseMax(0.0).cwiseMin(1.0);

    if (policy.crop) {
        const double mx = y.maxCoeff();
        const double thr = policy.background_frac * mx;
        long r0 = -1, r1 = -1, c0 = -1, c1 = -1;
        for (long i = 0; i < y.rows(); ++i) {
            for (long j = 0; j < y.cols(); ++j) {
                if (y(i, j) > thr) {
                    if (r0 < 0) r0 = i;
                    r1 = i;
                    if (c0 < 0 || j < c0) c0 = j;
                    if (j > c1) c1 = j;
                }
            }
        }
        if (r0 < 0) throw DataError("preprocess: fully-background image");
        y = y.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).eval();
    }
    return resize_bilinear(y, policy.out_size, policy.out_size);
}

episodes::DatasetManifest preprocess_dataset(const episodes::DatasetManifest& m,
                                             const std::filesystem::path& in_root,
                                             const std::filesystem::path& out_root,
                                             const PreprocessPolicy& policy) {
    episodes::DatasetManifest out = m;
    std::filesystem::create_directories(out_root / "images");
    for (auto& it : out.items) {
        Matrix img = preprocess(io::read_pgm(in_root / it.rel_path), policy);
        it.rel_path = "images/" + it.item_id + ".pgm";
        io::write_pgm(out_root / it.rel_path, img);
    }
    episodes::write_manifest(out, out_root / "manifest.csv");
    return out;
}

Matrix hflip(const Matrix& image) {
    return image.rowwise().reverse();
}

namespace {

double sample_bilinear(const Matrix& img, double sy, double sx) {
    const long h = img.rows(), w = img.cols();
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    const long y0 = static_cast<long>(std::floor(sy));
    const long x0 = static_cast<long>(std::floor(sx));
    const long y1 = std::min(y0 + 1, h - 1);
    const long x1 = std::min(x0 + 1, w - 1);
    const double fy = sy - y0, fx = sx - x0;
    return img(y0, x0) * (1 - fy) * (1 - fx) + img(y0, x1) * (1 - fy) * fx +
           img(y1, x0) * fy * (1 - fx) + img(y1, x1) * fy * fx;
}

}  // namespace

Matrix rotate_deg(const Matrix& image, double degrees) {
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (image.rows() - 1) / 2.0, cx = (image.cols() - 1) / 2.0;
    Matrix out(image.rows(), image.cols());
    for (long i = 0; i < image.rows(); ++i) {
        for (long j = 0; j < image.cols(); ++j) {
            const double dy = i - cy, dx = j - cx;
            // inverse rotation of the output grid
            const double sy = cy + c * dy + s * dx;
            const double sx = cx - s * dy + c * dx;
            out(i, j) = sample_bilinear(image, sy, sx);
        }
    }
    return out;
}

Matrix resize_bilinear(const Matrix& image, int rows, int cols) {
    require(rows > 0 && cols > 0, "resize_bilinear: bad target size");
    if (image.rows() == rows && image.cols() == cols) return image;
    Matrix out(rows, cols);
    const double ry = static_cast<double>(image.rows()) / rows;
    const double rx = static_cast<double>(image.cols()) / cols;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            out(i, j) = sample_bilinear(image, (i + 0.5) * ry - 0.5, (j + 0.5) * rx - 0.5);
        }
    }
    return out;
}

Matrix augment(const Matrix& image, Rng& rng, const AugmentPolicy& policy) {
    if (!policy.enabled) return image;
    Matrix out = image;
    if (policy.random_crop) {
        const double f = std::sqrt(rng.uniform(policy.min_crop_area, 1.0));
        const long side_r = std::clamp<long>(std::lround(image.rows() * f), 2, image.rows());
        const long side_c = std::clamp<long>(std::lround(image.cols() * f), 2, image.cols());
        const long y0 = static_cast<long>(rng.uniform_int(image.rows() - side_r + 1));
        const long x0 = static_cast<long>(rng.uniform_int(image.cols() - side_c + 1));
        out = resize_bilinear(out.block(y0, x0, side_r, side_c),
                              static_cast<int>(image.rows()), static_cast<int>(image.cols()));
    }
    if (policy.hflip && rng.bernoulli(0.5)) out = hflip(out);
    if (policy.rotate) out = rotate_deg(out, rng.uniform(-policy.max_rotate_deg,
                                                         policy.max_rotate_deg));
    return out;
}

}  // namespace amsf::datasets
