#include "rgfs/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "rgfs/errors.hpp"
#include "rgfs/image_io.hpp"
#include "rgfs/rng.hpp"

namespace fs = std::filesystem;

namespace rgfs {

void Dataset::rebuild_class_index() {
    samples_by_class.assign(manifest.classes.size(), {});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int c = samples[i].class_id;
        if (c < 0 || c >= static_cast<int>(manifest.classes.size()))
            throw ConfigError("sample with class_id outside manifest: " + samples[i].source_id);
        samples_by_class[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
    }
}

Dataset load_image_folder(const fs::path& root, int height, int width, int channels,
                          LoadReport* report) {
    if (!fs::is_directory(root))
        throw ConfigError("dataset directory not found: " + root.string());

    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    if (class_dirs.empty())
        throw ConfigError("no classes found under: " + root.string());

    Dataset ds;
    ds.manifest.height = height;
    ds.manifest.width = width;
    ds.manifest.channels = channels;
    LoadReport local;
    LoadReport& rep = report ? *report : local;

    for (std::size_t ci = 0; ci < class_dirs.size(); ++ci) {
        const fs::path& dir = class_dirs[ci];
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

        int count = 0;
        for (const auto& file : files) {
            auto pixels = decode_image(file, height, width, channels);
            if (!pixels) {
                ++rep.skipped;
                rep.warnings.push_back("skipping undecodable file: " + file.string());
                continue;
            }
            ImageSample sample;
            sample.pixels = std::move(*pixels);
            sample.class_id = static_cast<int>(ci);
            sample.source_id = file.string();
            ds.samples.push_back(std::move(sample));
            ++count;
            ++rep.loaded;
        }
        if (count == 0)
            throw ConfigError("class with zero usable images: " + dir.string());
        ds.manifest.classes.push_back({static_cast<int>(ci), dir.filename().string(), count});
    }
    ds.rebuild_class_index();
    return ds;
}

DatasetSplit make_split(const DatasetManifest& manifest, int base_count, std::uint64_t seed) {
    const int total = static_cast<int>(manifest.classes.size());
    if (base_count < 1 || base_count >= total)
        throw ConfigError("base class count must be in [1, num_classes): got " +
                          std::to_string(base_count) + " of " + std::to_string(total));
    std::vector<int> ids(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) ids[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, Stream::ClassSplit));
    rng.shuffle(ids);
    DatasetSplit split;
    split.base_classes.assign(ids.begin(), ids.begin() + base_count);
    split.novel_classes.assign(ids.begin() + base_count, ids.end());
    std::sort(split.base_classes.begin(), split.base_classes.end());
    std::sort(split.novel_classes.begin(), split.novel_classes.end());
    return split;
}

DatasetSplit make_split(const DatasetManifest& manifest, const std::vector<std::string>& base_names) {
    const int total = static_cast<int>(manifest.classes.size());
    std::set<int> base_ids;
    for (const auto& name : base_names) {
        auto it = std::find_if(manifest.classes.begin(), manifest.classes.end(),
                               [&](const ClassInfo& c) { return c.name == name; });
        if (it == manifest.classes.end())
            throw ConfigError("unknown class name in split: " + name);
        base_ids.insert(it->id);
    }
    if (base_ids.empty() || static_cast<int>(base_ids.size()) >= total)
        throw ConfigError("explicit base split must leave at least one novel class");
    DatasetSplit split;
    for (int i = 0; i < total; ++i) {
        if (base_ids.count(i))
            split.base_classes.push_back(i);
        else
            split.novel_classes.push_back(i);
    }
    return split;
}

namespace {

struct ClassRecipe {
    double hue, sat, val;
    double stripe_theta, stripe_freq, stripe_weight;
    double blob_fx, blob_fy, blob_weight;
};

ClassRecipe class_recipe(int class_index, int num_classes, std::uint64_t seed) {
    Rng rng(derive_seed(seed, Stream::SynthClass, static_cast<std::uint64_t>(class_index)));
    ClassRecipe r;
    // Golden-ratio hue spacing keeps class colors well separated for any count.
    r.hue = std::fmod(0.083 + 0.618033988749895 * class_index, 1.0);
    r.sat = rng.uniform(0.55, 0.95);
    r.val = rng.uniform(0.65, 0.95);
    r.stripe_theta = 3.14159265358979 * (class_index + rng.uniform(0.2, 0.8)) / num_classes;
    r.stripe_freq = rng.uniform(3.0, 8.0);
    r.stripe_weight = rng.uniform(0.25, 0.45);
    r.blob_fx = rng.uniform(2.0, 6.0);
    r.blob_fy = rng.uniform(2.0, 6.0);
    r.blob_weight = rng.uniform(0.2, 0.4);
    return r;
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    const double hh = h * 6.0;
    const int i = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

}  // namespace

Tensor render_synthetic_sample(int class_index, int sample_index, int num_classes, int height,
                               int width, int channels, std::uint64_t seed) {
    const ClassRecipe r = class_recipe(class_index, num_classes, seed);
    Rng rng(derive_seed(seed, Stream::SynthSample, static_cast<std::uint64_t>(class_index),
                        static_cast<std::uint64_t>(sample_index)));

    const double phase = rng.uniform(0.0, 6.283185307179586);
    const double phase_bx = rng.uniform(0.0, 6.283185307179586);
    const double phase_by = rng.uniform(0.0, 6.283185307179586);
    const double theta = r.stripe_theta + rng.uniform(-0.06, 0.06);
    const double freq = r.stripe_freq + rng.uniform(-0.4, 0.4);
    const int shift_x = rng.uniform_int(width);
    const int shift_y = rng.uniform_int(height);
    const double brightness = rng.uniform(0.85, 1.15);
    const double noise_sigma = 0.03;

    double rgb[3];
    hsv_to_rgb(r.hue, r.sat, r.val, rgb);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double base_weight = 1.0 - r.stripe_weight - r.blob_weight;

    Tensor out({channels, height, width});
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double sx = static_cast<double>((x + shift_x) % width);
            const double sy = static_cast<double>((y + shift_y) % height);
            const double proj = sx * ct + sy * st;
            const double stripe = 0.5 + 0.5 * std::sin(6.283185307179586 * freq * proj / width + phase);
            const double blob = 0.5 + 0.5 * std::sin(6.283185307179586 * r.blob_fx * sx / width + phase_bx) *
                                           std::sin(6.283185307179586 * r.blob_fy * sy / height + phase_by);
            const double intensity =
                brightness * (base_weight + r.stripe_weight * stripe + r.blob_weight * blob);
            for (int c = 0; c < channels; ++c) {
                const double tone = channels == 1 ? (rgb[0] + rgb[1] + rgb[2]) / 3.0 : rgb[c];
                const double v = tone * intensity + noise_sigma * rng.normal();
                out.at(c, y, x) = std::min(1.0, std::max(0.0, v));
            }
        }
    }
    return out;
}

Dataset generate_synthetic_dataset(int num_classes, int samples_per_class, int height, int width,
                                   int channels, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("synthetic dataset needs num_classes >= 2");
    if (samples_per_class < 2) throw ConfigError("synthetic dataset needs samples_per_class >= 2");
    if (height < 16 || width < 16)
        throw ConfigError("synthetic dataset needs at least 16x16 images");
    if (channels != 1 && channels != 3)
        throw ConfigError("synthetic dataset supports 1 or 3 channels");

    Dataset ds;
    ds.manifest.height = height;
    ds.manifest.width = width;
    ds.manifest.channels = channels;
    for (int c = 0; c < num_classes; ++c) {
        char name[32];
        std::snprintf(name, sizeof(name), "class_%02d", c);
        ds.manifest.classes.push_back({c, name, samples_per_class});
        for (int s = 0; s < samples_per_class; ++s) {
            ImageSample sample;
            sample.pixels = render_synthetic_sample(c, s, num_classes, height, width, channels, seed);
            sample.class_id = c;
            sample.source_id = std::string(name) + "/" + std::to_string(s);
            ds.samples.push_back(std::move(sample));
        }
    }
    ds.rebuild_class_index();
    return ds;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
    nlohmann::json j;
    j["shape"] = {manifest.height, manifest.width, manifest.channels};
    j["classes"] = nlohmann::json::array();
    for (const auto& c : manifest.classes)
        j["classes"].push_back({{"id", c.id}, {"name", c.name}, {"count", c.count}});
    j["split"]["base"] = manifest.split.base_classes;
    j["split"]["novel"] = manifest.split.novel_classes;
    return j.dump(2);
}

void validate_episode_capacity(const Dataset& dataset, const std::vector<int>& pool_classes,
                               int k_shot, int q_queries) {
    for (int c : pool_classes) {
        if (c < 0 || c >= dataset.num_classes())
            throw ConfigError("pool references unknown class id " + std::to_string(c));
        const int have = static_cast<int>(dataset.samples_by_class[static_cast<std::size_t>(c)].size());
        if (have < k_shot + q_queries)
            throw ConfigError("class '" + dataset.manifest.classes[static_cast<std::size_t>(c)].name +
                              "' has " + std::to_string(have) + " samples, needs " +
                              std::to_string(k_shot + q_queries));
    }
}

}  // namespace rgfs
