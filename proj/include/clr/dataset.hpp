#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clr/tensor.hpp"

namespace clr {

enum class Split { train, test };

/// Labeled images stored contiguously as [N, C, H, W] with pixels in [0,1].
struct Dataset {
    std::array<std::size_t, 3> image_shape{3, 32, 32};
    std::vector<float> pixels;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    Split split = Split::train;

    std::size_t size() const { return labels.size(); }
    std::size_t num_classes() const { return class_names.size(); }
    std::size_t image_numel() const { return image_shape[0] * image_shape[1] * image_shape[2]; }
    std::span<const float> image(std::size_t i) const {
        return {pixels.data() + i * image_numel(), image_numel()};
    }
    /// Gathers the given samples into a [n, C, H, W] tensor.
    Tensor batch(std::span<const std::size_t> indices) const;
    std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
    /// Throws DataError unless pixels lie in [0,1], labels in [0,K) and sizes agree.
    void validate() const;
};

const std::vector<std::string>& cifar10_class_names();

// Binary record format: one label byte followed by C*H*W pixel bytes, planar
// channel-major and row-major within each channel (for CIFAR-10: 1024 red,
// 1024 green, 1024 blue). Pixels are scaled by 1/255 on load and re-quantised
// with round(255 x) on write.
struct RecordFormat {
    std::array<std::size_t, 3> image_shape{3, 32, 32};
    int max_label = 9;
    std::size_t record_size() const { return 1 + image_shape[0] * image_shape[1] * image_shape[2]; }
};

/// Appends the records in `bytes` to `out`. Errors name the byte offset or record index.
void decode_records(std::span<const unsigned char> bytes, const RecordFormat& format, Dataset& out);
std::vector<unsigned char> encode_records(const Dataset& data);

Dataset load_record_file(const std::filesystem::path& path, const RecordFormat& format,
                         std::vector<std::string> class_names, Split split);
void write_record_file(const Dataset& data, const std::filesystem::path& path);

/// Reads data_batch_1..5.bin and test_batch.bin from a CIFAR-10 binary directory.
std::pair<Dataset, Dataset> load_cifar10_binary(const std::filesystem::path& directory);

struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::size_t train_per_class = 1000;
    std::size_t test_per_class = 100;
    std::array<std::size_t, 3> image_shape{3, 16, 16};
    double noise = 0.08;
    std::uint64_t seed = 7;
};

/// Seeded class-conditional images: every class is a windowed stripe motif with
/// its own frequency, orientation, position and colour, plus per-sample phase,
/// jitter, contrast and pixel noise. Samples are interleaved by class.
std::pair<Dataset, Dataset> gen_synthetic(const SyntheticSpec& spec);

} // namespace clr
