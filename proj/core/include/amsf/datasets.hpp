#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "amsf/common.hpp"
#include "amsf/episodes.hpp"
#include "amsf/rng.hpp"

namespace amsf::datasets {

/// Per-class texture description: which decomposition level carries the class
/// signal and how its energy splits across the three directions.
struct ClassRecipe {
    int band_level = 1;
    double frac_lh = 1.0 / 3, frac_hl = 1.0 / 3, frac_hh = 1.0 / 3;
    double texture_amp = 0.18;
    double noise_amp = 0.02;
    double distractor_amp = 0.0;
    std::vector<int> distractor_levels;
    double blob_rx = 0.32, blob_ry = 0.28;  // fractions of the canvas
};

struct SyntheticRecipe {
    int classes = 4;
    int patients_per_class = 5;
    int images_per_patient = 8;
    int image_size = 32;
    uint64_t seed = 7;
    std::string variant = "mixed";  // mixed | freq | level3 | custom
    int border = 4;                 // black margin width on the canvas
    std::vector<ClassRecipe> class_recipes;  // filled from variant when empty
};

/// Fills class_recipes from the variant palette and validates that classes
/// differ in at least one frequency-band parameter.
SyntheticRecipe resolve_variant(SyntheticRecipe r);

/// Writes images/ and manifest.csv under out_dir; byte-identical for a fixed
/// recipe. Patient style (background field, intensity, jitters) is constant
/// within a patient and small next to the between-class texture differences.
episodes::DatasetManifest generate_synthetic(const SyntheticRecipe& recipe,
                                             const std::filesystem::path& out_dir);

struct PreprocessPolicy {
    double window_level = 0.5;
    double window_width = 1.0;
    bool crop = true;
    double background_frac = 0.01;  // pixels <= frac * max are background
    int out_size = 32;
};

/// Window/level mapping into [0, 1], tight crop of the non-background region,
/// resize to out_size. Rejects fully-background images.
Matrix preprocess(const Matrix& image, const PreprocessPolicy& policy);

/// Applies the policy to every manifest image; writes images and a copied
/// manifest under out_root and returns the new manifest.
episodes::DatasetManifest preprocess_dataset(const episodes::DatasetManifest& m,
                                             const std::filesystem::path& in_root,
                                             const std::filesystem::path& out_root,
                                             const PreprocessPolicy& policy);

struct AugmentPolicy {
    bool enabled = true;
    bool random_crop = true;
    double min_crop_area = 0.8;
    bool hflip = true;
    bool rotate = true;
    double max_rotate_deg = 10.0;
};

/// Random resized crop, horizontal flip (p = 0.5), rotation within the
/// configured range. Identity when disabled; deterministic given rng state.
Matrix augment(const Matrix& image, Rng& rng, const AugmentPolicy& policy);

Matrix hflip(const Matrix& image);
Matrix rotate_deg(const Matrix& image, double degrees);  // bilinear, edge clamp
Matrix resize_bilinear(const Matrix& image, int rows, int cols);

uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace amsf::datasets
