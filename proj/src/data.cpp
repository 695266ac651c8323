#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedsim {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in)
        throw std::runtime_error(path + ": truncated at byte offset " + std::to_string(offset));
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(buf), 4);
}

// Shuffles indices with the given rng (Fisher-Yates, explicit so the stream
// consumption is ours, not the library's).
void shuffle_indices(std::vector<int>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> d(0, i - 1);
        std::swap(idx[i - 1], idx[d(rng)]);
    }
}

std::vector<std::vector<int>> indices_by_label(const Dataset& ds) {
    std::vector<std::vector<int>> by_label(ds.n_classes);
    for (int i = 0; i < ds.size(); ++i) by_label[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    return by_label;
}

} // namespace

void Dataset::validate() const {
    if (features.rows() < 1) throw std::invalid_argument("dataset must have at least one example");
    if (static_cast<Eigen::Index>(labels.size()) != features.rows())
        throw std::invalid_argument("label count does not match feature rows");
    if (n_classes < 2) throw std::invalid_argument("n_classes must be >= 2");
    for (int y : labels)
        if (y < 0 || y >= n_classes) throw std::invalid_argument("label out of range");
    if ((features.array() < -1e-9).any() || (features.array() > 1.0 + 1e-9).any())
        throw std::invalid_argument("features must lie in [0,1]");
}

PartitionScheme partition_scheme_from_string(const std::string& s) {
    if (s == "one_class") return PartitionScheme::one_class;
    if (s == "two_class") return PartitionScheme::two_class;
    if (s == "uniform_random") return PartitionScheme::uniform_random;
    if (s == "power_law_one_class") return PartitionScheme::power_law_one_class;
    throw std::invalid_argument("unknown partition scheme: " + s);
}

std::string to_string(PartitionScheme s) {
    switch (s) {
        case PartitionScheme::one_class: return "one_class";
        case PartitionScheme::two_class: return "two_class";
        case PartitionScheme::uniform_random: return "uniform_random";
        case PartitionScheme::power_law_one_class: return "power_law_one_class";
    }
    return "?";
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open " + labels_path);

    const std::uint32_t img_magic = read_u32_be(img, images_path, 0);
    if (img_magic != kImageMagic)
        throw std::runtime_error(images_path + ": bad magic number at byte offset 0");
    const std::uint32_t count = read_u32_be(img, images_path, 4);
    const std::uint32_t rows = read_u32_be(img, images_path, 8);
    const std::uint32_t cols = read_u32_be(img, images_path, 12);

    const std::uint32_t lab_magic = read_u32_be(lab, labels_path, 0);
    if (lab_magic != kLabelMagic)
        throw std::runtime_error(labels_path + ": bad magic number at byte offset 0");
    const std::uint32_t lab_count = read_u32_be(lab, labels_path, 4);
    if (lab_count != count)
        throw std::runtime_error(labels_path + ": item count " + std::to_string(lab_count) +
                                 " does not match image count " + std::to_string(count));
    if (count == 0) throw std::runtime_error(images_path + ": empty dataset");

    const std::size_t dim = static_cast<std::size_t>(rows) * cols;
    Dataset ds;
    ds.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
    ds.labels.resize(count);

    std::vector<unsigned char> buf(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
        if (!img)
            throw std::runtime_error(images_path + ": truncated at byte offset " +
                                     std::to_string(16 + static_cast<std::size_t>(i) * dim));
        for (std::size_t j = 0; j < dim; ++j)
            ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                buf[j] / 255.0;
        int c = lab.get();
        if (c == EOF)
            throw std::runtime_error(labels_path + ": truncated at byte offset " +
                                     std::to_string(8 + i));
        ds.labels[i] = c;
    }
    ds.n_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    if (ds.n_classes < 2) ds.n_classes = 2;
    ds.validate();
    return ds;
}

void save_idx(const Dataset& ds, int rows, int cols, const std::string& images_path,
              const std::string& labels_path) {
    if (static_cast<Eigen::Index>(rows) * cols != ds.features.cols())
        throw std::invalid_argument("rows*cols does not match feature dimension");
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot write " + images_path);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot write " + labels_path);

    write_u32_be(img, kImageMagic);
    write_u32_be(img, static_cast<std::uint32_t>(ds.size()));
    write_u32_be(img, static_cast<std::uint32_t>(rows));
    write_u32_be(img, static_cast<std::uint32_t>(cols));
    write_u32_be(lab, kLabelMagic);
    write_u32_be(lab, static_cast<std::uint32_t>(ds.size()));

    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
            const double v = std::clamp(ds.features(i, j), 0.0, 1.0);
            img.put(static_cast<char>(std::lround(v * 255.0)));
        }
        lab.put(static_cast<char>(ds.labels[static_cast<std::size_t>(i)]));
    }
}

Dataset synth_blobs(int n_classes, int dim, int per_class, double spread, std::uint64_t seed) {
    if (n_classes < 2 || dim < 1 || per_class < 1)
        throw std::invalid_argument("synth_blobs counts must be >= 1 (n_classes >= 2)");
    if (spread <= 0.0) throw std::invalid_argument("spread must be > 0");

    // Class means on a fixed grid over the first two dimensions, 0.5 elsewhere.
    const int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_classes))));
    Matrix means = Matrix::Constant(n_classes, dim, 0.5);
    for (int k = 0; k < n_classes; ++k) {
        means(k, 0) = (k % g + 0.5) / g;
        if (dim > 1) means(k, 1) = (k / g + 0.5) / g;
    }

    Dataset ds;
    ds.n_classes = n_classes;
    ds.features.resize(static_cast<Eigen::Index>(n_classes) * per_class, dim);
    ds.labels.resize(static_cast<std::size_t>(n_classes) * per_class);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, spread);
    Eigen::Index row = 0;
    for (int k = 0; k < n_classes; ++k) {
        for (int i = 0; i < per_class; ++i, ++row) {
            for (int j = 0; j < dim; ++j)
                ds.features(row, j) = std::clamp(means(k, j) + noise(rng), 0.0, 1.0);
            ds.labels[static_cast<std::size_t>(row)] = k;
        }
    }
    ds.validate();
    return ds;
}

ClientPartition partition(const Dataset& dataset, PartitionScheme scheme, int n_clients,
                          std::uint64_t seed, const PartitionParams& params) {
    dataset.validate();
    if (n_clients < 1) throw std::invalid_argument("n_clients must be >= 1");
    if (n_clients > dataset.size())
        throw std::invalid_argument("more clients than examples");

    std::mt19937_64 rng(seed);
    ClientPartition part;
    part.scheme = scheme;
    part.assignments.assign(static_cast<std::size_t>(n_clients), {});

    auto by_label = indices_by_label(dataset);
    for (auto& v : by_label) shuffle_indices(v, rng);

    switch (scheme) {
        case PartitionScheme::one_class:
        case PartitionScheme::power_law_one_class: {
            // Clients are dealt to classes round-robin; each class pool is then
            // split among its clients, evenly or by power-law rank weights.
            std::vector<std::vector<int>> clients_of_class(dataset.n_classes);
            for (int c = 0; c < n_clients; ++c)
                clients_of_class[static_cast<std::size_t>(c % dataset.n_classes)].push_back(c);
            for (int k = 0; k < dataset.n_classes; ++k) {
                const auto& members = clients_of_class[static_cast<std::size_t>(k)];
                auto& pool = by_label[static_cast<std::size_t>(k)];
                if (members.empty()) {
                    // fewer clients than classes: the whole pool is dropped
                    part.dropped_count += static_cast<int>(pool.size());
                    continue;
                }
                const int m = static_cast<int>(pool.size());
                const int q = static_cast<int>(members.size());
                std::vector<int> sizes(members.size(), 0);
                if (scheme == PartitionScheme::one_class) {
                    std::fill(sizes.begin(), sizes.end(), m / q);
                } else {
                    // size of the r-th client of this class ~ (r+1)^(-exponent)
                    std::vector<double> w(members.size());
                    double wsum = 0.0;
                    for (int r = 0; r < q; ++r)
                        wsum += w[static_cast<std::size_t>(r)] =
                            std::pow(r + 1.0, -params.power_law_exponent);
                    for (int r = 0; r < q; ++r)
                        sizes[static_cast<std::size_t>(r)] = std::max(
                            params.min_client_size,
                            static_cast<int>(std::floor(m * w[static_cast<std::size_t>(r)] / wsum)));
                    // Trim largest-first if the floors overshoot the pool.
                    long total = std::accumulate(sizes.begin(), sizes.end(), 0L);
                    for (int r = 0; total > m && r < q; ++r) {
                        const long excess = total - m;
                        const int reducible =
                            std::max(0, sizes[static_cast<std::size_t>(r)] - params.min_client_size);
                        const int cut = static_cast<int>(std::min<long>(excess, reducible));
                        sizes[static_cast<std::size_t>(r)] -= cut;
                        total -= cut;
                    }
                    if (total > m)
                        throw std::invalid_argument(
                            "power_law_one_class infeasible: class pool too small for min sizes");
                }
                std::size_t cursor = 0;
                for (int r = 0; r < q; ++r) {
                    const int take = sizes[static_cast<std::size_t>(r)];
                    if (take < 1)
                        throw std::invalid_argument("one-class scheme infeasible: empty client");
                    auto& dst = part.assignments[static_cast<std::size_t>(members[static_cast<std::size_t>(r)])];
                    dst.insert(dst.end(), pool.begin() + static_cast<long>(cursor),
                               pool.begin() + static_cast<long>(cursor) + take);
                    cursor += static_cast<std::size_t>(take);
                }
                part.dropped_count += m - static_cast<int>(cursor);
            }
            break;
        }
        case PartitionScheme::two_class: {
            if (dataset.n_classes < 2)
                throw std::invalid_argument("two_class scheme needs >= 2 classes");
            // Client c draws a random pair of distinct classes.
            std::vector<std::pair<int, int>> pairs(static_cast<std::size_t>(n_clients));
            std::vector<std::vector<int>> wanting(dataset.n_classes);
            for (int c = 0; c < n_clients; ++c) {
                std::uniform_int_distribution<int> d1(0, dataset.n_classes - 1);
                std::uniform_int_distribution<int> d2(0, dataset.n_classes - 2);
                const int a = d1(rng);
                int b = d2(rng);
                if (b >= a) ++b;
                pairs[static_cast<std::size_t>(c)] = {a, b};
                wanting[static_cast<std::size_t>(a)].push_back(c);
                wanting[static_cast<std::size_t>(b)].push_back(c);
            }
            std::vector<std::size_t> cursor(static_cast<std::size_t>(dataset.n_classes), 0);
            for (int k = 0; k < dataset.n_classes; ++k) {
                const auto& clients = wanting[static_cast<std::size_t>(k)];
                auto& pool = by_label[static_cast<std::size_t>(k)];
                if (clients.empty()) {
                    part.dropped_count += static_cast<int>(pool.size());
                    continue;
                }
                const int share = static_cast<int>(pool.size()) / static_cast<int>(clients.size());
                if (share < 1)
                    throw std::invalid_argument("two_class scheme infeasible: class " +
                                                std::to_string(k) + " oversubscribed");
                for (int c : clients) {
                    auto& dst = part.assignments[static_cast<std::size_t>(c)];
                    dst.insert(dst.end(), pool.begin() + static_cast<long>(cursor[static_cast<std::size_t>(k)]),
                               pool.begin() + static_cast<long>(cursor[static_cast<std::size_t>(k)]) + share);
                    cursor[static_cast<std::size_t>(k)] += static_cast<std::size_t>(share);
                }
                part.dropped_count +=
                    static_cast<int>(pool.size() - cursor[static_cast<std::size_t>(k)]);
            }
            break;
        }
        case PartitionScheme::uniform_random: {
            std::vector<int> all(static_cast<std::size_t>(dataset.size()));
            std::iota(all.begin(), all.end(), 0);
            shuffle_indices(all, rng);
            const int share = static_cast<int>(all.size()) / n_clients;
            if (share < 1) throw std::invalid_argument("uniform_random infeasible: empty client");
            for (int c = 0; c < n_clients; ++c)
                part.assignments[static_cast<std::size_t>(c)].assign(
                    all.begin() + static_cast<long>(c) * share,
                    all.begin() + static_cast<long>(c + 1) * share);
            part.dropped_count = static_cast<int>(all.size()) - share * n_clients;
            break;
        }
    }

    for (const auto& a : part.assignments)
        if (a.empty()) throw std::invalid_argument("partition produced an empty client");
    return part;
}

Eigen::RowVectorXd one_hot(int label, int n) {
    if (label < 0 || label >= n) throw std::invalid_argument("one_hot label out of range");
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
    row(label) = 1.0;
    return row;
}

Batch make_batch(const Dataset& ds, const std::vector<int>& indices) {
    Batch b;
    b.inputs.resize(static_cast<Eigen::Index>(indices.size()), ds.features.cols());
    b.targets = Matrix::Zero(static_cast<Eigen::Index>(indices.size()), ds.n_classes);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        b.inputs.row(static_cast<Eigen::Index>(i)) = ds.features.row(indices[i]);
        b.targets(static_cast<Eigen::Index>(i), ds.labels[static_cast<std::size_t>(indices[i])]) = 1.0;
    }
    return b;
}

} // namespace fedsim
