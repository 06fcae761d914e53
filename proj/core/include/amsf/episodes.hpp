#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "amsf/common.hpp"
#include "amsf/rng.hpp"

namespace amsf::episodes {

enum class Split : int { Unassigned = -1, Train = 0, Val = 1, Test = 2 };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestItem {
    std::string item_id;
    std::string rel_path;
    std::string class_label;
    std::string patient_id;
    Split split = Split::Unassigned;
};

struct DatasetManifest {
    std::vector<ManifestItem> items;

    std::vector<std::string> class_labels() const;  // sorted, unique
    bool has_splits() const;
};

/// CSV with header item_id,relative_path,class_label,patient_id[,split].
DatasetManifest read_manifest(const std::filesystem::path& file);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& file);

/// Assigns every patient of every class to exactly one split, honoring the
/// ratio per class as closely as integer counts allow, each split nonempty.
/// A class with fewer than 3 patients is rejected by name.
void split_by_patient(DatasetManifest& m, const std::array<int, 3>& ratios, uint64_t seed);

struct EpisodeSpec {
    int n_way = 0, k_shot = 0, n_query = 0;
    std::vector<std::string> classes;            // episode-local label order
    std::vector<std::vector<int>> support;       // [class][shot] manifest indices
    std::vector<std::vector<int>> query;         // [class][query] manifest indices
};

/// Support patients and query patients are disjoint within every class: the
/// class's patients are partitioned into two pools and items drawn per pool.
EpisodeSpec sample_episode(const DatasetManifest& m, Split split, int n_way, int k_shot,
                           int n_query, Rng& rng);

/// Reproducible stream of `count` independent episodes.
class EpisodeBatcher {
public:
    EpisodeBatcher(const DatasetManifest& m, Split split, int n_way, int k_shot, int n_query,
                   int count, uint64_t seed);

    bool next(EpisodeSpec& out);
    int remaining() const { return remaining_; }

private:
    const DatasetManifest& manifest_;
    Split split_;
    int n_way_, k_shot_, n_query_;
    int remaining_;
    Rng rng_;
};

}  // namespace amsf::episodes
