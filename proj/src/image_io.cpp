#include "rgfs/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>

#include "rgfs/errors.hpp"

namespace rgfs {

std::optional<Tensor> decode_image(const std::filesystem::path& path, int height, int width,
                                   int channels) {
    cv::Mat img = cv::imread(path.string(),
                             channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (img.empty()) return std::nullopt;

    if (img.rows != height || img.cols != width) {
        cv::Mat resized;
        cv::resize(img, resized, cv::Size(width, height), 0.0, 0.0, cv::INTER_LINEAR);
        img = resized;
    }

    Tensor out({channels, height, width});
    if (channels == 1) {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                out.at(0, y, x) = img.at<std::uint8_t>(y, x) / 255.0;
    } else {
        // OpenCV decodes BGR; store RGB.
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const cv::Vec3b px = img.at<cv::Vec3b>(y, x);
                out.at(0, y, x) = px[2] / 255.0;
                out.at(1, y, x) = px[1] / 255.0;
                out.at(2, y, x) = px[0] / 255.0;
            }
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor& pixels) {
    if (pixels.rank() != 3) throw ConfigError("write_png: expected (C,H,W) tensor");
    const int c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
    if (c != 1 && c != 3) throw ConfigError("write_png: channels must be 1 or 3");

    auto to_byte = [](double v) {
        const double s = std::lround(v * 255.0);
        return static_cast<std::uint8_t>(s < 0 ? 0 : (s > 255 ? 255 : s));
    };

    cv::Mat img(h, w, c == 1 ? CV_8UC1 : CV_8UC3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (c == 1) {
                img.at<std::uint8_t>(y, x) = to_byte(pixels.at(0, y, x));
            } else {
                img.at<cv::Vec3b>(y, x) = cv::Vec3b(to_byte(pixels.at(2, y, x)),
                                                    to_byte(pixels.at(1, y, x)),
                                                    to_byte(pixels.at(0, y, x)));
            }
        }
    }
    if (!cv::imwrite(path.string(), img))
        throw TrainError("failed to write image: " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Tensor& bits) {
    if (bits.rank() != 2) throw ConfigError("write_pgm: expected (H,W) tensor");
    const int h = bits.dim(0), w = bits.dim(1);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TrainError("failed to open for writing: " + path.string());
    out << "P5\n" << w << " " << h << "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.put(bits.at(y, x) > 0.5 ? static_cast<char>(255) : static_cast<char>(0));
    if (!out) throw TrainError("failed while writing: " + path.string());
}

Tensor read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrainError("failed to open: " + path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        throw TrainError("unsupported PGM: " + path.string());
    in.get();  // single whitespace after header
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(y, x) = static_cast<std::uint8_t>(in.get()) / 255.0;
    return out;
}

}  // namespace rgfs
