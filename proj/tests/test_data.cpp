#include "fedsim/data.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace fedsim;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "fedsim_data_test";
    std::filesystem::create_directories(dir);
    return dir;
}

// Byte-level IDX fixture: three 2x2 images, labels 0/1/2, authored directly
// against the format's byte layout.
void write_idx_fixture(const std::string& images, const std::string& labels) {
    const unsigned char img_bytes[] = {
        0x00, 0x00, 0x08, 0x03, // magic 2051
        0x00, 0x00, 0x00, 0x03, // 3 images
        0x00, 0x00, 0x00, 0x02, // 2 rows
        0x00, 0x00, 0x00, 0x02, // 2 cols
        0,   255, 51,  102,     // image 0
        255, 0,   204, 153,     // image 1
        10,  20,  30,  40,      // image 2
    };
    const unsigned char lab_bytes[] = {
        0x00, 0x00, 0x08, 0x01, // magic 2049
        0x00, 0x00, 0x00, 0x03, // 3 labels
        0,    1,    2,
    };
    std::ofstream(images, std::ios::binary)
        .write(reinterpret_cast<const char*>(img_bytes), sizeof img_bytes);
    std::ofstream(labels, std::ios::binary)
        .write(reinterpret_cast<const char*>(lab_bytes), sizeof lab_bytes);
}

} // namespace

TEST_CASE("load_idx recovers the hand-written fixture exactly") {
    const auto dir = temp_dir();
    const std::string img = (dir / "fixture-images").string();
    const std::string lab = (dir / "fixture-labels").string();
    write_idx_fixture(img, lab);

    const Dataset ds = load_idx(img, lab);
    CHECK(ds.size() == 3);
    CHECK(ds.dim() == 4);
    CHECK(ds.labels == std::vector<int>{0, 1, 2});
    CHECK(ds.features(0, 0) == 0.0);
    CHECK(ds.features(0, 1) == 1.0); // byte 255 -> 1.0
    CHECK(ds.features(0, 2) == doctest::Approx(51.0 / 255.0));
    CHECK(ds.features(1, 3) == doctest::Approx(153.0 / 255.0));
    CHECK(ds.features(2, 0) == doctest::Approx(10.0 / 255.0));
}

TEST_CASE("load_idx rejects bad magic, truncation, and count mismatch") {
    const auto dir = temp_dir();
    const std::string img = (dir / "bad-images").string();
    const std::string lab = (dir / "bad-labels").string();
    write_idx_fixture(img, lab);

    SUBCASE("bad magic") {
        std::fstream f(img, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(3);
        f.put(0x04);
        f.close();
        CHECK_THROWS_WITH_AS(load_idx(img, lab), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
    SUBCASE("truncated image data") {
        std::filesystem::resize_file(img, 20);
        CHECK_THROWS_WITH_AS(load_idx(img, lab), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    SUBCASE("count mismatch") {
        std::fstream f(lab, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(7);
        f.put(0x02);
        f.close();
        CHECK_THROWS_WITH_AS(load_idx(img, lab), doctest::Contains("does not match"),
                             std::runtime_error);
    }
}

TEST_CASE("save_idx and load_idx round-trip a quantized dataset") {
    Dataset ds;
    ds.n_classes = 2;
    ds.features.resize(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) ds.features(i, j) = (i * 4 + j) / 15.0;
    ds.labels = {0, 1, 1, 0};

    const auto dir = temp_dir();
    const std::string img = (dir / "rt-images").string();
    const std::string lab = (dir / "rt-labels").string();
    save_idx(ds, 2, 2, img, lab);
    const Dataset back = load_idx(img, lab);
    CHECK(back.size() == 4);
    CHECK(back.labels == ds.labels);
    // quantization error is at most half a byte step
    CHECK((back.features - ds.features).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("synth_blobs is deterministic and respects the spread") {
    const Dataset a = synth_blobs(3, 2, 20, 0.05, 42);
    const Dataset b = synth_blobs(3, 2, 20, 0.05, 42);
    CHECK(a.labels == b.labels);
    CHECK((a.features - b.features).cwiseAbs().maxCoeff() == 0.0);

    // near-degenerate spread: all points of a class collapse onto its mean
    const Dataset tight = synth_blobs(2, 2, 10, 1e-12, 7);
    for (int i = 1; i < 10; ++i)
        CHECK((tight.features.row(i) - tight.features.row(0)).cwiseAbs().maxCoeff() < 1e-9);

    CHECK(a.features.minCoeff() >= 0.0);
    CHECK(a.features.maxCoeff() <= 1.0);
    CHECK_THROWS_AS(synth_blobs(2, 2, 10, 0.0, 1), std::invalid_argument);
}

TEST_CASE("partition invariants: disjoint, in range, non-empty") {
    const Dataset ds = synth_blobs(4, 2, 30, 0.1, 3);
    for (auto scheme : {PartitionScheme::one_class, PartitionScheme::two_class,
                        PartitionScheme::uniform_random, PartitionScheme::power_law_one_class}) {
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            const ClientPartition part = partition(ds, scheme, 8, seed);
            std::set<int> seen;
            int total = 0;
            for (const auto& a : part.assignments) {
                CHECK(!a.empty());
                for (int idx : a) {
                    CHECK(idx >= 0);
                    CHECK(idx < ds.size());
                    CHECK(seen.insert(idx).second); // disjointness
                    ++total;
                }
            }
            CHECK(total + part.dropped_count == ds.size());
        }
    }
}

TEST_CASE("one_class gives every client a single label over many seeds") {
    const Dataset ds = synth_blobs(2, 2, 40, 0.1, 9);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ClientPartition part = partition(ds, PartitionScheme::one_class, 4, seed);
        for (const auto& a : part.assignments) {
            std::set<int> labels;
            for (int idx : a) labels.insert(ds.labels[static_cast<std::size_t>(idx)]);
            CHECK(labels.size() == 1);
        }
    }
}

TEST_CASE("two_class gives every client exactly two labels") {
    const Dataset ds = synth_blobs(5, 2, 60, 0.1, 11);
    const ClientPartition part = partition(ds, PartitionScheme::two_class, 6, 13);
    for (const auto& a : part.assignments) {
        std::set<int> labels;
        for (int idx : a) labels.insert(ds.labels[static_cast<std::size_t>(idx)]);
        CHECK(labels.size() == 2);
    }
}

TEST_CASE("single client owns everything under any scheme") {
    const Dataset ds = synth_blobs(2, 2, 10, 0.1, 5);
    for (auto scheme : {PartitionScheme::uniform_random, PartitionScheme::power_law_one_class}) {
        const ClientPartition part = partition(ds, scheme, 1, 1);
        CHECK(part.n_clients() == 1);
        CHECK(static_cast<int>(part.assignments[0].size()) + part.dropped_count == ds.size());
    }
}

TEST_CASE("power_law_one_class sizes decay with rank") {
    const Dataset ds = synth_blobs(2, 2, 500, 0.1, 17);
    const ClientPartition part = partition(ds, PartitionScheme::power_law_one_class, 100, 23);
    std::vector<double> sizes;
    for (const auto& a : part.assignments) sizes.push_back(static_cast<double>(a.size()));
    std::sort(sizes.begin(), sizes.end(), std::greater<>());
    for (std::size_t i = 1; i < sizes.size(); ++i) CHECK(sizes[i] <= sizes[i - 1]);
    CHECK(sizes.front() > sizes.back());

    // log-log size/rank regression slope must be negative
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const double x = std::log(static_cast<double>(i + 1));
        const double y = std::log(sizes[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(slope < -0.1);
}

TEST_CASE("partition determinism and infeasibility errors") {
    const Dataset ds = synth_blobs(2, 2, 20, 0.1, 19);
    const ClientPartition a = partition(ds, PartitionScheme::uniform_random, 5, 77);
    const ClientPartition b = partition(ds, PartitionScheme::uniform_random, 5, 77);
    CHECK(a.assignments == b.assignments);
    CHECK_THROWS_AS(partition(ds, PartitionScheme::uniform_random, 41, 1),
                    std::invalid_argument);
}

TEST_CASE("one_hot basics") {
    const auto row = one_hot(2, 4);
    CHECK(row(0) == 0.0);
    CHECK(row(2) == 1.0);
    CHECK(row.sum() == 1.0);
    const auto first = one_hot(0, 2);
    CHECK(first(0) == 1.0);
    for (int n : {2, 5, 9})
        for (int k = 0; k < n; ++k) {
            const auto r = one_hot(k, n);
            Eigen::Index arg = 0;
            r.maxCoeff(&arg);
            CHECK(static_cast<int>(arg) == k);
        }
    CHECK_THROWS_AS(one_hot(4, 4), std::invalid_argument);
    CHECK_THROWS_AS(one_hot(-1, 4), std::invalid_argument);
}

TEST_CASE("a linear head separates tight blobs to near-perfect train accuracy") {
    // oracle for the blob generator: the module's own trainer must fit it
    const Dataset ds = synth_blobs(2, 2, 50, 0.05, 31);
    ModelSpec spec{{2, 2}};
    ParamVector params = init_params(spec, 1);
    std::vector<int> all(static_cast<std::size_t>(ds.size()));
    for (int i = 0; i < ds.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    const Batch batch = make_batch(ds, all);
    for (int step = 0; step < 300; ++step) {
        const ParamVector g = grad_params(spec, params, batch);
        vec_axpy(params, -0.5, g);
    }
    const Matrix probs = forward(spec, params, batch.inputs);
    int correct = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        if (argmax_row(probs, i) == ds.labels[static_cast<std::size_t>(i)]) ++correct;
    CHECK(static_cast<double>(correct) / ds.size() >= 0.99);
}
