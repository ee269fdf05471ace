#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rgfs/tensor.hpp"

namespace rgfs {

/// One labelled image. Pixels are stored channel-major (C, H, W) with every
/// value in [0, 1].
struct ImageSample {
    Tensor pixels;
    int class_id = -1;
    std::string source_id;
};

struct ClassInfo {
    int id = 0;
    std::string name;
    int count = 0;
};

/// Disjoint base/novel class id sets covering the whole dataset.
struct DatasetSplit {
    std::vector<int> base_classes;
    std::vector<int> novel_classes;
};

struct DatasetManifest {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<ClassInfo> classes;
    DatasetSplit split;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<ImageSample> samples;
    std::vector<std::vector<int>> samples_by_class;  // class id -> sample indices

    int num_classes() const { return static_cast<int>(manifest.classes.size()); }
    void rebuild_class_index();
};

/// Ingestion diagnostics: files that failed to decode are skipped, not fatal.
struct LoadReport {
    int loaded = 0;
    int skipped = 0;
    std::vector<std::string> warnings;
};

/// Loads root/<class_name>/<image> trees. Classes get contiguous ids in
/// lexicographic directory-name order; images are decoded, bilinearly resized
/// to (height, width) and scaled to [0, 1]. Undecodable files are skipped with
/// a warning; a class with no usable image is fatal.
Dataset load_image_folder(const std::filesystem::path& root, int height, int width, int channels,
                          LoadReport* report = nullptr);

/// Seeded random split: shuffle class ids, first base_count become base.
DatasetSplit make_split(const DatasetManifest& manifest, int base_count, std::uint64_t seed);

/// Explicit split by class names; overrides any seeded choice.
DatasetSplit make_split(const DatasetManifest& manifest, const std::vector<std::string>& base_names);

/// Procedural texture dataset: each class pairs a base hue with a stripe
/// orientation/frequency and a blob frequency; samples add phase jitter,
/// circular shifts, brightness jitter and pixel noise. Deterministic in seed.
Dataset generate_synthetic_dataset(int num_classes, int samples_per_class, int height, int width,
                                   int channels, std::uint64_t seed);

/// Renders one synthetic sample (used by the generator and by `synth` when
/// materializing a folder tree).
Tensor render_synthetic_sample(int class_index, int sample_index, int num_classes, int height,
                               int width, int channels, std::uint64_t seed);

std::string manifest_to_json(const DatasetManifest& manifest);

/// Validates that every class in the chosen pool can fill an episode.
void validate_episode_capacity(const Dataset& dataset, const std::vector<int>& pool_classes,
                               int k_shot, int q_queries);

}  // namespace rgfs
