#include "clr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "clr/error.hpp"
#include "clr/rng.hpp"

namespace clr {

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
    const std::size_t d = image_numel();
    Tensor t({indices.size(), image_shape[0], image_shape[1], image_shape[2]});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw UsageError("dataset: sample index out of range");
        std::copy_n(pixels.data() + indices[i] * d, d, t.data.data() + i * d);
    }
    return t;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
}

void Dataset::validate() const {
    if (pixels.size() != labels.size() * image_numel())
        throw DataError("dataset: " + std::to_string(pixels.size()) + " pixels for " +
                        std::to_string(labels.size()) + " samples");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes())
            throw DataError("dataset: label " + std::to_string(labels[i]) + " of sample " +
                            std::to_string(i) + " outside [0," + std::to_string(num_classes()) + ")");
    for (std::size_t i = 0; i < pixels.size(); ++i)
        if (!(pixels[i] >= 0.0f && pixels[i] <= 1.0f))
            throw DataError("dataset: pixel " + std::to_string(i % image_numel()) + " of sample " +
                            std::to_string(i / image_numel()) + " outside [0,1]");
}

const std::vector<std::string>& cifar10_class_names() {
    static const std::vector<std::string> names{"airplane", "automobile", "bird",  "cat",  "deer",
                                                "dog",      "frog",       "horse", "ship", "truck"};
    return names;
}

void decode_records(std::span<const unsigned char> bytes, const RecordFormat& format, Dataset& out) {
    const std::size_t rec = format.record_size();
    if (bytes.size() % rec != 0) {
        const std::size_t offset = bytes.size() - bytes.size() % rec;
        throw DataError("records: truncated record at byte offset " + std::to_string(offset) + " (size " +
                        std::to_string(bytes.size()) + " is not a multiple of " + std::to_string(rec) + ")");
    }
    const std::size_t n = bytes.size() / rec;
    out.image_shape = format.image_shape;
    out.labels.reserve(out.labels.size() + n);
    out.pixels.reserve(out.pixels.size() + n * (rec - 1));
    for (std::size_t r = 0; r < n; ++r) {
        const unsigned char* p = bytes.data() + r * rec;
        if (p[0] > format.max_label)
            throw DataError("records: label byte " + std::to_string(p[0]) + " of record " + std::to_string(r) +
                            " exceeds " + std::to_string(format.max_label));
        out.labels.push_back(p[0]);
        for (std::size_t k = 1; k < rec; ++k) out.pixels.push_back(static_cast<float>(p[k]) / 255.0f);
    }
}

std::vector<unsigned char> encode_records(const Dataset& data) {
    const std::size_t d = data.image_numel();
    std::vector<unsigned char> out;
    out.reserve(data.size() * (d + 1));
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] < 0 || data.labels[i] > 255)
            throw DataError("records: label " + std::to_string(data.labels[i]) + " does not fit a byte");
        out.push_back(static_cast<unsigned char>(data.labels[i]));
        for (float v : data.image(i)) {
            float q = std::round(255.0f * std::clamp(v, 0.0f, 1.0f));
            out.push_back(static_cast<unsigned char>(q));
        }
    }
    return out;
}

Dataset load_record_file(const std::filesystem::path& path, const RecordFormat& format,
                         std::vector<std::string> class_names, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open record file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Dataset d;
    d.class_names = std::move(class_names);
    d.split = split;
    try {
        decode_records(bytes, format, d);
    } catch (const DataError& e) {
        throw DataError(path.filename().string() + ": " + e.what());
    }
    return d;
}

void write_record_file(const Dataset& data, const std::filesystem::path& path) {
    auto bytes = encode_records(data);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write record file " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing record file " + path.string());
}

std::pair<Dataset, Dataset> load_cifar10_binary(const std::filesystem::path& dir) {
    RecordFormat fmt;
    Dataset train;
    train.class_names = cifar10_class_names();
    train.split = Split::train;
    for (int b = 1; b <= 5; ++b) {
        auto part = load_record_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), fmt,
                                     cifar10_class_names(), Split::train);
        train.image_shape = part.image_shape;
        train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
        train.pixels.insert(train.pixels.end(), part.pixels.begin(), part.pixels.end());
    }
    Dataset test = load_record_file(dir / "test_batch.bin", fmt, cifar10_class_names(), Split::test);
    return {std::move(train), std::move(test)};
}

namespace {

struct ClassMotif {
    bool vertical = false;
    double cycles = 2.0;
    double center_y = 0.5;
    double center_x = 0.5;
    std::array<double, 3> colour{1, 1, 1};
};

// Pairs of classes share a tint direction with opposite signs.
constexpr std::array<std::array<double, 3>, 5> kTints{{{1, -0.3, -0.3}, {-0.3, 1, -0.3}, {-0.3, -0.3, 1},
                                                       {0.7, 0.7, -0.7}, {0.7, -0.7, 0.7}}};

ClassMotif motif_for(std::size_t k, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xC1A55000ULL + k));
    ClassMotif m;
    m.vertical = (k % 2) == 1;
    m.cycles = 1.5 + static_cast<double>((k / 2) % 5) * 0.9;
    m.center_y = 0.3 + 0.4 * static_cast<double>((k * 7) % 3) / 2.0;
    m.center_x = 0.5;
    const auto& dir = kTints[(k / 2) % kTints.size()];
    const double sign = (k % 2) ? -1.0 : 1.0;
    for (std::size_t c = 0; c < 3; ++c) m.colour[c] = sign * dir[c] + rng.uniform(-0.15, 0.15);
    return m;
}

void render(const ClassMotif& m, const std::array<std::size_t, 3>& shape, double noise, Rng& rng,
            float* out) {
    const std::size_t C = shape[0], H = shape[1], W = shape[2];
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double jy = rng.uniform(-0.08, 0.08), jx = rng.uniform(-0.08, 0.08);
    const double contrast = rng.uniform(0.6, 1.0);
    const double background = rng.uniform(0.35, 0.65);
    // Class-independent nuisance grating.
    const double d_amp = rng.uniform(0.0, 0.08);
    const double d_theta = rng.uniform(0.0, std::numbers::pi);
    const double d_cycles = rng.uniform(1.0, 6.0);
    const double d_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double sigma = 0.28;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(W);
            const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(H);
            const double dy = v - m.center_y - jy, dx = u - m.center_x - jx;
            const double window = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            const double coord = m.vertical ? u : v;
            const double stripe = std::sin(2.0 * std::numbers::pi * m.cycles * coord + phase);
            const double nuisance =
                d_amp * std::sin(2.0 * std::numbers::pi * d_cycles * (u * std::cos(d_theta) + v * std::sin(d_theta)) +
                                 d_phase);
            for (std::size_t c = 0; c < C; ++c) {
                const double tint = m.colour[c % 3];
                double val = background + contrast * window * (0.25 * stripe + 0.4 * tint) + nuisance +
                             noise * rng.normal();
                out[(c * H + y) * W + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
        }
}

Dataset synth_split(const SyntheticSpec& spec, const std::vector<ClassMotif>& motifs, Split split) {
    Dataset d;
    d.image_shape = spec.image_shape;
    d.split = split;
    for (std::size_t k = 0; k < spec.num_classes; ++k) d.class_names.push_back("class" + std::to_string(k));
    const std::size_t per_class = split == Split::train ? spec.train_per_class : spec.test_per_class;
    const std::size_t n = per_class * spec.num_classes;
    d.labels.resize(n);
    d.pixels.resize(n * d.image_numel());
    const std::uint64_t stream_base = split == Split::train ? 0 : (1ULL << 40);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = i % spec.num_classes;
        d.labels[i] = static_cast<int>(k);
        Rng rng(derive_seed(spec.seed, stream_base + i));
        render(motifs[k], spec.image_shape, spec.noise, rng, d.pixels.data() + i * d.image_numel());
    }
    return d;
}

} // namespace

std::pair<Dataset, Dataset> gen_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (spec.train_per_class == 0 || spec.test_per_class == 0)
        throw ConfigError("synthetic: samples per class must be positive");
    for (auto d : spec.image_shape)
        if (d == 0) throw ConfigError("synthetic: image shape entries must be positive");
    if (spec.noise < 0.0) throw ConfigError("synthetic: noise must be non-negative");
    std::vector<ClassMotif> motifs;
    for (std::size_t k = 0; k < spec.num_classes; ++k) motifs.push_back(motif_for(k, spec.seed));
    return {synth_split(spec, motifs, Split::train), synth_split(spec, motifs, Split::test)};
}

} // namespace clr
