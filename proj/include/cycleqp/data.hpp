#ifndef CYCLEQP_DATA_HPP
#define CYCLEQP_DATA_HPP

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cycleqp/tensor.hpp"

namespace cycleqp {

/// Affine pixel codec: 8-bit channel -> [-1, 1] and back.
struct PixelCodec {
    double mean = 0.5;
    double std_dev = 0.5;

    template <class T>
    T encode(std::uint8_t p) const {
        return static_cast<T>((p / 255.0 - mean) / std_dev);
    }

    template <class T>
    std::uint8_t decode(T v) const {
        double p = static_cast<double>(v) * std_dev + mean;
        p = std::min(1.0, std::max(0.0, p));
        return static_cast<std::uint8_t>(std::floor(p * 255.0 + 0.5));  // round half up
    }
};

struct UnpairedDataset {
    std::vector<std::filesystem::path> domain_r_paths;  // photos
    std::vector<std::filesystem::path> domain_s_paths;  // paintings
    long crop_size = 256;
    double flip_probability = 0.5;

    void validate() const {
        if (domain_r_paths.empty() || domain_s_paths.empty())
            throw std::invalid_argument("UnpairedDataset: both domains must be non-empty");
        if (crop_size < 1) throw std::invalid_argument("UnpairedDataset: crop_size must be positive");
        if (flip_probability < 0.0 || flip_probability > 1.0)
            throw std::invalid_argument("UnpairedDataset: flip_probability must be in [0, 1]");
    }
};

namespace data_detail {

inline bool is_image_file(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw std::invalid_argument("dataset directory not found: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace data_detail

/// Opens `<root>/<style>/trainA` (photos) and `<root>/<style>/trainB`
/// (paintings).
inline UnpairedDataset open_dataset(const std::filesystem::path& root, const std::string& style, long crop_size = 256,
                                    double flip_probability = 0.5) {
    UnpairedDataset ds;
    ds.domain_r_paths = data_detail::list_images(root / style / "trainA");
    ds.domain_s_paths = data_detail::list_images(root / style / "trainB");
    ds.crop_size = crop_size;
    ds.flip_probability = flip_probability;
    ds.validate();
    return ds;
}

/// Resizes so the short side reaches `target` (only when needed unless
/// `always` is set), preserving aspect ratio.
inline cv::Mat resize_short_side(const cv::Mat& img, long target, bool always = false) {
    const long short_side = std::min<long>(img.rows, img.cols);
    if (!always && short_side >= target) return img;
    const double scale = static_cast<double>(target) / static_cast<double>(short_side);
    cv::Mat out;
    cv::resize(img, out, cv::Size(std::max<int>(static_cast<int>(std::lround(img.cols * scale)), static_cast<int>(target)),
                                  std::max<int>(static_cast<int>(std::lround(img.rows * scale)), static_cast<int>(target))),
               0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
    return out;
}

inline std::pair<long, long> center_crop_offsets(long width, long height, long crop) {
    return {(width - crop) / 2, (height - crop) / 2};
}

/// Random horizontal flip, center crop, normalize to [-1, 1].
/// Returns a (3, crop, crop) tensor, or nullopt when the image is unusable.
template <class T>
std::optional<Tensor<T>> preprocess(const cv::Mat& rgb, long crop_size, double flip_probability, std::mt19937_64& rng,
                                    const PixelCodec& codec = {}) {
    if (rgb.empty()) return std::nullopt;
    cv::Mat img = resize_short_side(rgb, crop_size);
    if (img.rows < crop_size || img.cols < crop_size) {
        std::cerr << "warning: image smaller than crop size after resize, skipping\n";
        return std::nullopt;
    }
    const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < flip_probability;
    if (flip) cv::flip(img, img, 1);
    const auto [ox, oy] = center_crop_offsets(img.cols, img.rows, crop_size);
    Tensor<T> out({3, crop_size, crop_size});
    for (long y = 0; y < crop_size; ++y) {
        const cv::Vec3b* row = img.ptr<cv::Vec3b>(static_cast<int>(oy + y));
        for (long x = 0; x < crop_size; ++x) {
            const cv::Vec3b px = row[ox + x];
            for (long c = 0; c < 3; ++c)
                out[(c * crop_size + y) * crop_size + x] = codec.encode<T>(px[static_cast<int>(c)]);
        }
    }
    return out;
}

/// Deterministic test-time path: resize the short side to `size`, center
/// crop, normalize. Returns a (1, 3, size, size) batch.
template <class T>
Tensor<T> preprocess_for_inference(const cv::Mat& rgb, long size, const PixelCodec& codec = {}) {
    if (rgb.empty()) throw std::invalid_argument("preprocess_for_inference: empty image");
    cv::Mat img = resize_short_side(rgb, size, /*always=*/true);
    const auto [ox, oy] = center_crop_offsets(img.cols, img.rows, size);
    Tensor<T> out({1, 3, size, size});
    for (long y = 0; y < size; ++y) {
        const cv::Vec3b* row = img.ptr<cv::Vec3b>(static_cast<int>(oy + y));
        for (long x = 0; x < size; ++x)
            for (long c = 0; c < 3; ++c) out.at(0, c, y, x) = codec.encode<T>(row[ox + x][static_cast<int>(c)]);
    }
    return out;
}

/// Loads an image file as 8-bit RGB (alpha discarded).
inline cv::Mat load_rgb(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) return bgr;
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

/// Draws batch_size images with replacement from each domain independently.
template <class T>
std::pair<Tensor<T>, Tensor<T>> sample_batch(const UnpairedDataset& ds, long batch_size, std::mt19937_64& rng) {
    ds.validate();
    if (batch_size < 1) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
    auto draw_domain = [&](const std::vector<std::filesystem::path>& paths) {
        Tensor<T> batch({batch_size, 3, ds.crop_size, ds.crop_size});
        std::uniform_int_distribution<std::size_t> pick(0, paths.size() - 1);
        const long per = 3 * ds.crop_size * ds.crop_size;
        for (long b = 0; b < batch_size;) {
            const auto& path = paths[pick(rng)];
            auto t = preprocess<T>(load_rgb(path), ds.crop_size, ds.flip_probability, rng);
            if (!t) {
                std::cerr << "warning: unreadable image " << path << ", redrawing\n";
                continue;
            }
            std::copy(t->data(), t->data() + per, batch.data() + b * per);
            ++b;
        }
        return batch;
    };
    auto r = draw_domain(ds.domain_r_paths);
    auto s = draw_domain(ds.domain_s_paths);
    return {std::move(r), std::move(s)};
}

/// Maps one sample of a (N, 3, H, W) batch back to an 8-bit RGB image.
template <class T>
cv::Mat denormalize(const Tensor<T>& batch, long index = 0, const PixelCodec& codec = {}) {
    if (batch.rank() != 4 || batch.dim(1) != 3) throw std::invalid_argument("denormalize: (N, 3, H, W) batch required");
    const long H = batch.dim(2), W = batch.dim(3);
    cv::Mat img(static_cast<int>(H), static_cast<int>(W), CV_8UC3);
    for (long y = 0; y < H; ++y) {
        cv::Vec3b* row = img.ptr<cv::Vec3b>(static_cast<int>(y));
        for (long x = 0; x < W; ++x)
            for (long c = 0; c < 3; ++c) row[x][static_cast<int>(c)] = codec.decode<T>(batch.at(index, c, y, x));
    }
    return img;
}

inline bool save_rgb(const cv::Mat& rgb, const std::filesystem::path& path) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return cv::imwrite(path.string(), bgr);
}

}  // namespace cycleqp

#endif
