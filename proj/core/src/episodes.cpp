#include "amsf/episodes.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace amsf::episodes {

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        default: return "unassigned";
    }
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    if (name.empty() || name == "unassigned") return Split::Unassigned;
    throw ConfigError("unknown split name: " + name);
}

std::vector<std::string> DatasetManifest::class_labels() const {
    std::set<std::string> s;
    for (const auto& it : items) s.insert(it.class_label);
    return {s.begin(), s.end()};
}

bool DatasetManifest::has_splits() const {
    for (const auto& it : items) {
        if (it.split == Split::Unassigned) return false;
    }
    return !items.empty();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open manifest: " + file.string());
    DatasetManifest m;
    std::string line;
    if (!std::getline(in, line)) throw DataError("manifest missing header row: " + file.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "item_id" || header[1] != "relative_path" ||
        header[2] != "class_label" || header[3] != "patient_id") {
        throw DataError("manifest header must start with item_id,relative_path,class_label,patient_id");
    }
    const bool with_split = header.size() >= 5 && header[4] == "split";
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() < 4) throw DataError("manifest row with fewer than 4 fields: " + line);
        ManifestItem item{f[0], f[1], f[2], f[3], Split::Unassigned};
        if (with_split && f.size() >= 5) item.split = split_from_name(f[4]);
        m.items.push_back(std::move(item));
    }
    return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write manifest: " + file.string());
    const bool with_split = m.has_splits();
    out << "item_id,relative_path,class_label,patient_id";
    if (with_split) out << ",split";
    out << "\n";
    for (const auto& it : m.items) {
        out << it.item_id << ',' << it.rel_path << ',' << it.class_label << ',' << it.patient_id;
        if (with_split) out << ',' << split_name(it.split);
        out << "\n";
    }
}

void split_by_patient(DatasetManifest& m, const std::array<int, 3>& ratios, uint64_t seed) {
    if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0) {
        throw ConfigError("split_by_patient: ratios must be positive");
    }
    for (const auto& it : m.items) {
        if (it.patient_id.empty()) throw DataError("item without patient_id: " + it.item_id);
    }

    // class -> ordered unique patients; a patient may not span classes
    std::map<std::string, std::vector<std::string>> class_patients;
    std::map<std::string, std::string> patient_class;
    for (const auto& it : m.items) {
        auto found = patient_class.find(it.patient_id);
        if (found == patient_class.end()) {
            patient_class[it.patient_id] = it.class_label;
            class_patients[it.class_label].push_back(it.patient_id);
        } else if (found->second != it.class_label) {
            throw DataError("patient " + it.patient_id + " appears under multiple classes");
        }
    }

    const double total_ratio = ratios[0] + ratios[1] + ratios[2];
    std::map<std::string, Split> assignment;
    Rng rng(seed);
    for (auto& [cls, patients] : class_patients) {
        const int p = static_cast<int>(patients.size());
        if (p < 3) {
            throw DataError("class " + cls + " has only " + std::to_string(p) +
                            " patients; need >= 3 for a 3-way patient split");
        }
        // largest-remainder apportionment, then guarantee each split nonempty
        std::array<int, 3> counts{};
        std::array<double, 3> frac{};
        int assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double exact = p * ratios[s] / total_ratio;
            counts[s] = static_cast<int>(exact);
            frac[s] = exact - counts[s];
            assigned += counts[s];
        }
        while (assigned < p) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac[s] > frac[best]) best = s;
            ++counts[best];
            frac[best] = -1.0;
            ++assigned;
        }
        for (int s = 0; s < 3; ++s) {
            while (counts[s] == 0) {
                int donor = 0;
                for (int t = 1; t < 3; ++t)
                    if (counts[t] > counts[donor]) donor = t;
                --counts[donor];
                ++counts[s];
            }
        }
        std::sort(patients.begin(), patients.end());
        rng.shuffle(patients);
        int idx = 0;
        for (int s = 0; s < 3; ++s) {
            for (int k = 0; k < counts[s]; ++k) {
                assignment[patients[idx++]] = static_cast<Split>(s);
            }
        }
    }
    for (auto& it : m.items) it.split = assignment.at(it.patient_id);
}

EpisodeSpec sample_episode(const DatasetManifest& m, Split split, int n_way, int k_shot,
                           int n_query, Rng& rng) {
    if (n_way < 2 || k_shot < 1 || n_query < 1) {
        throw ConfigError("sample_episode: need n_way >= 2, k_shot >= 1, n_query >= 1");
    }
    // class -> patient -> item indices, restricted to the split
    std::map<std::string, std::map<std::string, std::vector<int>>> pool;
    for (int i = 0; i < static_cast<int>(m.items.size()); ++i) {
        const auto& it = m.items[i];
        if (it.split == split) pool[it.class_label][it.patient_id].push_back(i);
    }
    if (static_cast<int>(pool.size()) < n_way) {
        throw DataError("sample_episode: split has " + std::to_string(pool.size()) +
                        " classes, need " + std::to_string(n_way));
    }

    std::vector<std::string> classes;
    for (const auto& [cls, _] : pool) classes.push_back(cls);
    rng.shuffle(classes);
    classes.resize(n_way);

    EpisodeSpec ep;
    ep.n_way = n_way;
    ep.k_shot = k_shot;
    ep.n_query = n_query;
    ep.classes = classes;
    ep.support.resize(n_way);
    ep.query.resize(n_way);

    for (int c = 0; c < n_way; ++c) {
        auto& by_patient = pool[classes[c]];
        const int p = static_cast<int>(by_patient.size());
        if (p < 2) {
            throw DataError("sample_episode: class " + classes[c] +
                            " has a single patient in this split; support/query "
                            "disjointness is infeasible");
        }
        std::vector<std::string> patients;
        for (const auto& [pid, _] : by_patient) patients.push_back(pid);
        rng.shuffle(patients);

        auto items_in = [&](int first, int count) {
            std::vector<int> out;
            for (int i = first; i < first + count; ++i) {
                const auto& v = by_patient[patients[i]];
                out.insert(out.end(), v.begin(), v.end());
            }
            return out;
        };

        // random cut of the patient list into support/query pools; scan the
        // remaining cuts in order if the drawn one cannot satisfy the counts
        const int start = 1 + static_cast<int>(rng.uniform_int(p - 1));
        bool placed = false;
        for (int off = 0; off < p - 1 && !placed; ++off) {
            const int cut = 1 + (start - 1 + off) % (p - 1);
            std::vector<int> sup_items = items_in(0, cut);
            std::vector<int> qry_items = items_in(cut, p - cut);
            if (static_cast<int>(sup_items.size()) < k_shot ||
                static_cast<int>(qry_items.size()) < n_query) {
                continue;
            }
            rng.shuffle(sup_items);
            rng.shuffle(qry_items);
            sup_items.resize(k_shot);
            qry_items.resize(n_query);
            ep.support[c] = std::move(sup_items);
            ep.query[c] = std::move(qry_items);
            placed = true;
        }
        if (!placed) {
            throw DataError("sample_episode: class " + classes[c] +
                            " cannot supply " + std::to_string(k_shot) + " support and " +
                            std::to_string(n_query) + " query items from disjoint patients");
        }
    }
    return ep;
}

EpisodeBatcher::EpisodeBatcher(const DatasetManifest& m, Split split, int n_way, int k_shot,
                               int n_query, int count, uint64_t seed)
    : manifest_(m), split_(split), n_way_(n_way), k_shot_(k_shot), n_query_(n_query),
      remaining_(count), rng_(seed) {
    if (count < 0) throw ConfigError("EpisodeBatcher: count must be >= 0");
}

bool EpisodeBatcher::next(EpisodeSpec& out) {
    if (remaining_ <= 0) return false;
    out = sample_episode(manifest_, split_, n_way_, k_shot_, n_query_, rng_);
    --remaining_;
    return true;
}

}  // namespace amsf::episodes
