#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "fedlsi/data/batching.hpp"
#include "fedlsi/data/dataset.hpp"
#include "fedlsi/data/split.hpp"
#include "support/probe.hpp"

using namespace fedlsi;
using namespace fedlsi::data;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.domains = {{.angle_deg = 0.0}, {.angle_deg = 60.0}, {.angle_deg = 90.0}};
    spec.noise_sigma = 0.3;
    spec.samples_per_domain = 120;
    spec.ambient_dim = 6;
    return spec;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
    }
    ~TempFile() { std::remove(path.c_str()); }
};

std::vector<std::vector<double>> features_of(const DomainDataset& ds) {
    std::vector<std::vector<double>> out;
    for (const auto& e : ds.examples) {
        out.push_back(e.features);
    }
    return out;
}

}  // namespace

TEST_CASE("rotation identity: 90 degrees maps (1,0) to (0,1)") {
    auto v = rotate2d({1.0, 0.0}, 90.0);
    CHECK(v[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(1.0));
}

TEST_CASE("noiseless generation repeats the prototype points exactly") {
    SyntheticSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    spec.samples_per_domain = 4;
    auto datasets = generate_rotated_blobs(spec, 1);
    const auto& d0 = datasets[0];
    REQUIRE(d0.size() == 4);
    // samples alternate between the two class prototypes
    CHECK(d0.examples[0].features == d0.examples[2].features);
    CHECK(d0.examples[1].features == d0.examples[3].features);
    CHECK(d0.examples[0].features != d0.examples[1].features);
}

TEST_CASE("generation is deterministic per (spec, seed)") {
    auto a = generate_rotated_blobs(small_spec(), 33);
    auto b = generate_rotated_blobs(small_spec(), 33);
    REQUIRE(a.size() == b.size());
    for (std::size_t d = 0; d < a.size(); ++d) {
        REQUIRE(a[d].size() == b[d].size());
        for (std::size_t i = 0; i < a[d].size(); ++i) {
            CHECK(a[d].examples[i].features == b[d].examples[i].features);
            CHECK(a[d].examples[i].label == b[d].examples[i].label);
        }
    }
    auto c = generate_rotated_blobs(small_spec(), 34);
    CHECK(a[0].examples[0].features != c[0].examples[0].features);
}

TEST_CASE("invalid specs are rejected") {
    SyntheticSpec spec = small_spec();
    spec.classes = 1;
    CHECK_THROWS(generate_rotated_blobs(spec, 1));
    spec = small_spec();
    spec.domains.resize(2);
    CHECK_THROWS(generate_rotated_blobs(spec, 1));
    spec = small_spec();
    spec.noise_sigma = -0.1;
    CHECK_THROWS(generate_rotated_blobs(spec, 1));
}

TEST_CASE("generated domains are separable by a domain probe") {
    SyntheticSpec spec = small_spec();
    spec.domains = {{.angle_deg = 0.0}, {.angle_deg = 60.0}, {.angle_deg = 90.0}};
    auto datasets = generate_rotated_blobs(spec, 5);
    // domains 0 vs 1 (angles 0 and 60) must be distinguishable from raw features
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int d : {0, 1}) {
        for (const auto& e : datasets[static_cast<std::size_t>(d)].examples) {
            xs.push_back(e.features);
            ys.push_back(d);
        }
    }
    testsupport::LinearProbe probe(spec.ambient_dim, 2, 17);
    probe.fit(xs, ys);
    CHECK(probe.accuracy(xs, ys) > 0.70);
}

TEST_CASE("class structure survives the shift") {
    SyntheticSpec spec = small_spec();
    spec.noise_sigma = 0.5;
    auto datasets = generate_rotated_blobs(spec, 6);
    const auto& d0 = datasets[0];
    std::vector<int> labels;
    for (const auto& e : d0.examples) {
        labels.push_back(e.label);
    }
    testsupport::LinearProbe probe(spec.ambient_dim, 2, 23);
    probe.fit(features_of(d0), labels);
    CHECK(probe.accuracy(features_of(d0), labels) > 0.90);
}

TEST_CASE("csv round trip and minimal parse") {
    TempFile tmp("fedlsi_test_data.csv");
    {
        std::ofstream out(tmp.path);
        out << "domain,label,f0,f1\n";
        out << "0,1,0.5,0.25\n";
    }
    auto datasets = load_csv(tmp.path);
    REQUIRE(datasets.size() == 1);
    REQUIRE(datasets[0].size() == 1);
    CHECK(datasets[0].examples[0].label == 1);
    CHECK(datasets[0].examples[0].features == std::vector<double>{0.5, 0.25});

    // write out generated data and read it back bit-exactly
    auto generated = generate_rotated_blobs(small_spec(), 2);
    write_csv(generated, tmp.path);
    auto reloaded = load_csv(tmp.path);
    REQUIRE(reloaded.size() == generated.size());
    for (std::size_t d = 0; d < generated.size(); ++d) {
        for (std::size_t i = 0; i < generated[d].size(); ++i) {
            CHECK(reloaded[d].examples[i].features == generated[d].examples[i].features);
        }
    }
}

TEST_CASE("csv rejects ragged rows, bad numbers and unknown columns") {
    TempFile tmp("fedlsi_test_bad.csv");
    {
        std::ofstream out(tmp.path);
        out << "domain,label,f0,f1\n0,1,0.5,0.25\n0,1,0.5\n";
    }
    CHECK_THROWS(load_csv(tmp.path));
    {
        std::ofstream out(tmp.path);
        out << "domain,label,f0,f1\n0,1,abc,0.25\n";
    }
    CHECK_THROWS(load_csv(tmp.path));
    {
        std::ofstream out(tmp.path);
        out << "domain,label,f0,feature1\n";
    }
    CHECK_THROWS(load_csv(tmp.path));
}

TEST_CASE("empty csv body yields an empty dataset list") {
    TempFile tmp("fedlsi_test_empty.csv");
    {
        std::ofstream out(tmp.path);
        out << "domain,label,f0,f1\n";
    }
    CHECK(load_csv(tmp.path).empty());
}

TEST_CASE("leave-one-out split reserves the unseen domain and stratifies") {
    SyntheticSpec spec = small_spec();
    spec.domains = {{.angle_deg = 0.0},
                    {.angle_deg = 30.0},
                    {.angle_deg = 60.0},
                    {.angle_deg = 90.0}};
    auto datasets = generate_rotated_blobs(spec, 7);
    auto split = leave_one_out_split(datasets, 3, 0.1, 42);
    CHECK(split.clients.size() == 3);
    CHECK(split.unseen.domain_id == 3);
    CHECK(split.unseen.size() == datasets[3].size());

    std::size_t total = split.unseen.size();
    for (const auto& c : split.clients) {
        CHECK(c.domain_id != 3);
        total += c.train.size() + c.val.size();
        // every class in train
        std::set<int> classes;
        for (const auto& e : c.train.examples) {
            classes.insert(e.label);
        }
        CHECK(static_cast<int>(classes.size()) == split.num_classes);
        // stratified fraction within one example per class
        CHECK(c.val.size() ==
              doctest::Approx(0.1 * static_cast<double>(c.train.size() + c.val.size()))
                  .epsilon(0.25));
    }
    std::size_t expected = 0;
    for (const auto& d : datasets) {
        expected += d.size();
    }
    CHECK(total == expected);
}

TEST_CASE("split rejects a missing unseen id and emits the zero-val warning") {
    auto datasets = generate_rotated_blobs(small_spec(), 8);
    CHECK_THROWS(leave_one_out_split(datasets, 9, 0.1, 1));
    std::vector<std::string> warnings;
    auto split = leave_one_out_split(datasets, 0, 0.0, 1, &warnings);
    CHECK(warnings.size() == 1);
    for (const auto& c : split.clients) {
        CHECK(c.val.size() == 0);
    }
}

TEST_CASE("split membership is deterministic per seed") {
    auto datasets = generate_rotated_blobs(small_spec(), 9);
    auto a = leave_one_out_split(datasets, 1, 0.2, 5);
    auto b = leave_one_out_split(datasets, 1, 0.2, 5);
    for (std::size_t c = 0; c < a.clients.size(); ++c) {
        REQUIRE(a.clients[c].train.size() == b.clients[c].train.size());
        for (std::size_t i = 0; i < a.clients[c].train.size(); ++i) {
            CHECK(a.clients[c].train.examples[i].features ==
                  b.clients[c].train.examples[i].features);
        }
    }
}

TEST_CASE("minibatch iterator covers an epoch with the documented sizes") {
    DomainDataset ds;
    ds.domain_id = 0;
    for (int i = 0; i < 10; ++i) {
        ds.examples.push_back({{static_cast<double>(i)}, i % 2, 0});
    }
    MinibatchIter iter(ds, 3, 11);
    auto batches = iter.next_epoch();
    REQUIRE(batches.size() == 4);
    CHECK(batches[0].indices.size() == 3);
    CHECK(batches[3].indices.size() == 1);
    std::set<std::size_t> seen;
    for (const auto& b : batches) {
        for (auto i : b.indices) {
            seen.insert(i);
        }
    }
    CHECK(seen.size() == 10);
}

TEST_CASE("same-class batches each hold exactly one label") {
    DomainDataset ds;
    ds.domain_id = 0;
    for (int i = 0; i < 30; ++i) {
        ds.examples.push_back({{static_cast<double>(i)}, i % 3, 0});
    }
    MinibatchIter iter(ds, 4, 13, {.same_class = true});
    for (int epoch = 0; epoch < 3; ++epoch) {
        for (const auto& b : iter.next_epoch()) {
            REQUIRE(b.label >= 0);
            for (auto i : b.indices) {
                CHECK(ds.examples[i].label == b.label);
            }
        }
    }
}

TEST_CASE("two iterators with the same seed emit identical batch order") {
    DomainDataset ds;
    for (int i = 0; i < 25; ++i) {
        ds.examples.push_back({{static_cast<double>(i)}, i % 2, 0});
    }
    MinibatchIter a(ds, 4, 99);
    MinibatchIter b(ds, 4, 99);
    for (int epoch = 0; epoch < 2; ++epoch) {
        auto ba = a.next_epoch();
        auto bb = b.next_epoch();
        REQUIRE(ba.size() == bb.size());
        for (std::size_t i = 0; i < ba.size(); ++i) {
            CHECK(ba[i].indices == bb[i].indices);
        }
    }
}

TEST_CASE("drop-incomplete mode rejects oversized batches") {
    DomainDataset ds;
    for (int i = 0; i < 5; ++i) {
        ds.examples.push_back({{0.0}, 0, 0});
    }
    CHECK_THROWS(MinibatchIter(ds, 6, 1, {.drop_incomplete = true}));
    CHECK_NOTHROW(MinibatchIter(ds, 6, 1));
}
