#include <doctest.h>

#include <map>
#include <set>

#include "amsf/episodes.hpp"
#include "test_support.hpp"

using namespace amsf;
using namespace amsf::episodes;

namespace {

// class c gets patient_counts[c] patients with images_per_patient items each
DatasetManifest make_manifest(const std::vector<int>& patient_counts, int images_per_patient) {
    DatasetManifest m;
    for (size_t c = 0; c < patient_counts.size(); ++c) {
        for (int p = 0; p < patient_counts[c]; ++p) {
            for (int i = 0; i < images_per_patient; ++i) {
                const std::string pid = "c" + std::to_string(c) + "_p" + std::to_string(p);
                const std::string iid = pid + "_i" + std::to_string(i);
                m.items.push_back({iid, iid + ".pgm", "class_" + std::to_string(c), pid,
                                   Split::Unassigned});
            }
        }
    }
    return m;
}

std::map<std::string, std::set<Split>> splits_per_patient(const DatasetManifest& m) {
    std::map<std::string, std::set<Split>> out;
    for (const auto& it : m.items) out[it.patient_id].insert(it.split);
    return out;
}

}  // namespace

TEST_CASE("split_by_patient divides 10 patients per class exactly 5/3/2") {
    DatasetManifest m = make_manifest({10, 10, 10}, 2);
    split_by_patient(m, {5, 3, 2}, 7);
    for (int c = 0; c < 3; ++c) {
        std::map<Split, std::set<std::string>> per_split;
        for (const auto& it : m.items) {
            if (it.class_label == "class_" + std::to_string(c)) {
                per_split[it.split].insert(it.patient_id);
            }
        }
        CHECK(per_split[Split::Train].size() == 5);
        CHECK(per_split[Split::Val].size() == 3);
        CHECK(per_split[Split::Test].size() == 2);
    }
}

TEST_CASE("split_by_patient is deterministic under a fixed seed") {
    DatasetManifest a = make_manifest({5, 6, 3, 7}, 3);
    DatasetManifest b = a;
    split_by_patient(a, {5, 3, 2}, 42);
    split_by_patient(b, {5, 3, 2}, 42);
    for (size_t i = 0; i < a.items.size(); ++i) CHECK(a.items[i].split == b.items[i].split);
}

TEST_CASE("a 21-patient manifest has no cross-split patients") {
    DatasetManifest m = make_manifest({5, 6, 3, 7}, 4);
    split_by_patient(m, {5, 3, 2}, 99);
    for (const auto& [patient, splits] : splits_per_patient(m)) {
        CAPTURE(patient);
        CHECK(splits.size() == 1);
    }
    // all classes present in every split
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        std::set<std::string> classes;
        for (const auto& it : m.items) {
            if (it.split == s) classes.insert(it.class_label);
        }
        CHECK(classes.size() == 4);
    }
}

TEST_CASE("split_by_patient rejects a class with too few patients by name") {
    DatasetManifest m = make_manifest({5, 2}, 3);
    try {
        split_by_patient(m, {5, 3, 2}, 1);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("class_1") != std::string::npos);
    }
}

TEST_CASE("two-patient classes always separate support from query") {
    DatasetManifest m = make_manifest({2, 2}, 4);
    for (auto& it : m.items) it.split = Split::Train;
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        EpisodeSpec ep = sample_episode(m, Split::Train, 2, 1, 1, rng);
        for (int c = 0; c < ep.n_way; ++c) {
            std::set<std::string> sup, qry;
            for (int idx : ep.support[c]) sup.insert(m.items[idx].patient_id);
            for (int idx : ep.query[c]) qry.insert(m.items[idx].patient_id);
            for (const auto& pid : sup) CHECK(qry.count(pid) == 0);
        }
    }
}

TEST_CASE("sample_episode rejects an oversized way count") {
    DatasetManifest m = make_manifest({3, 3}, 4);
    for (auto& it : m.items) it.split = Split::Train;
    Rng rng(6);
    CHECK_THROWS_AS(sample_episode(m, Split::Train, 3, 1, 1, rng), DataError);
}

TEST_CASE("sample_episode names a single-patient class") {
    DatasetManifest m = make_manifest({3, 1}, 8);
    for (auto& it : m.items) it.split = Split::Train;
    Rng rng(7);
    bool saw_error = false;
    for (int trial = 0; trial < 20 && !saw_error; ++trial) {
        try {
            sample_episode(m, Split::Train, 2, 1, 1, rng);
        } catch (const DataError& e) {
            saw_error = true;
            CHECK(std::string(e.what()).find("class_1") != std::string::npos);
        }
    }
    CHECK(saw_error);
}

TEST_CASE("a thousand sampled episodes never leak patients") {
    DatasetManifest m = make_manifest({5, 6, 3, 7}, 6);
    split_by_patient(m, {5, 3, 2}, 11);
    Rng rng(12);
    for (int t = 0; t < 1000; ++t) {
        EpisodeSpec ep = sample_episode(m, Split::Train, 3, 1, 2, rng);
        for (int c = 0; c < ep.n_way; ++c) {
            std::set<std::string> sup, qry;
            for (int idx : ep.support[c]) {
                sup.insert(m.items[idx].patient_id);
                CHECK(m.items[idx].class_label == ep.classes[c]);
                CHECK(m.items[idx].split == Split::Train);
            }
            for (int idx : ep.query[c]) {
                qry.insert(m.items[idx].patient_id);
                CHECK(m.items[idx].class_label == ep.classes[c]);
            }
            for (const auto& pid : sup) CHECK(qry.count(pid) == 0);
        }
    }
}

TEST_CASE("episode batcher emits exactly count episodes, reproducibly") {
    DatasetManifest m = make_manifest({4, 4, 4, 4}, 5);
    for (auto& it : m.items) it.split = Split::Train;

    EpisodeBatcher empty(m, Split::Train, 4, 1, 2, 0, 3);
    EpisodeSpec ep;
    CHECK_FALSE(empty.next(ep));

    EpisodeBatcher a(m, Split::Train, 4, 1, 2, 100, 3);
    EpisodeBatcher b(m, Split::Train, 4, 1, 2, 100, 3);
    int count = 0;
    EpisodeSpec ea, eb;
    while (a.next(ea)) {
        REQUIRE(b.next(eb));
        CHECK(ea.classes == eb.classes);
        CHECK(ea.support == eb.support);
        CHECK(ea.query == eb.query);
        ++count;
    }
    CHECK(count == 100);
}

TEST_CASE("manifest files round-trip through read/write") {
    amsf_test::ScopedTempDir dir("manifest_roundtrip");
    DatasetManifest m = make_manifest({3, 3}, 2);
    split_by_patient(m, {5, 3, 2}, 4);
    write_manifest(m, dir.path / "m.csv");
    DatasetManifest back = read_manifest(dir.path / "m.csv");
    REQUIRE(back.items.size() == m.items.size());
    for (size_t i = 0; i < m.items.size(); ++i) {
        CHECK(back.items[i].item_id == m.items[i].item_id);
        CHECK(back.items[i].rel_path == m.items[i].rel_path);
        CHECK(back.items[i].class_label == m.items[i].class_label);
        CHECK(back.items[i].patient_id == m.items[i].patient_id);
        CHECK(back.items[i].split == m.items[i].split);
    }
    CHECK(back.has_splits());
}
