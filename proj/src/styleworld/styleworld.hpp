#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "numerics/rng.hpp"
#include "styleworld/image.hpp"

namespace stylecode::world {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

enum class Texture { plain, stripes, dots, checker, gradient };

struct Border {
    Rgb color;
    int width = 1;
    bool operator==(const Border&) const = default;
};

// Procedural style parameters. Two specs are the same style iff style_id matches.
struct StyleSpec {
    int style_id = 0;
    std::array<Rgb, 3> palette{};  // background, texture accent, shape fill
    Texture texture = Texture::plain;
    int texture_period = 4;
    std::optional<Border> border;
    std::uint64_t jitter_seed = 0;  // texture phase offset

    bool operator==(const StyleSpec&) const = default;
};

enum class ShapeKind { circle, square, triangle };

struct Shape2D {
    ShapeKind kind = ShapeKind::circle;
    int cx = 0, cy = 0, radius = 1;
    bool operator==(const Shape2D&) const = default;
};

struct ContentSpec {
    std::vector<Shape2D> shapes;
    std::vector<std::int32_t> caption_tokens;
    bool operator==(const ContentSpec&) const = default;
};

// ---- caption vocabulary -------------------------------------------------

inline constexpr std::size_t kVocabSize = 64;
inline constexpr std::size_t kCaptionLength = 10;  // count + 3 x (size, kind, position)
inline constexpr std::int32_t kPadToken = 0;

const std::array<std::string, kVocabSize>& vocabulary();
// Whitespace-separated words to token ids, padded/truncated to kCaptionLength.
// Throws std::invalid_argument on unknown words.
std::vector<std::int32_t> parse_caption(const std::string& text);
std::string caption_text(std::span<const std::int32_t> tokens);
std::vector<std::int32_t> describe(const std::vector<Shape2D>& shapes, int size);

// ---- rendering ----------------------------------------------------------

bool valid_size(int size);
void validate(const StyleSpec& style, int size);

Image render(const StyleSpec& style, const ContentSpec& content, int size);

StyleSpec random_style(int style_id, CounterRng& rng, int size);
ContentSpec random_content(CounterRng& rng, int size);

std::uint64_t content_hash(const ContentSpec& content);

// ---- dataset ------------------------------------------------------------

enum class Split { train, eval };

struct DatasetConfig {
    int styles = 64;
    int contents = 24;
    int size = 32;
    std::uint64_t seed = 1;
};

struct ImageRecord {
    std::string path;  // relative to the dataset directory
    int style_id = 0;
    std::uint64_t content_hash = 0;
    std::vector<std::int32_t> caption_tokens;
    Split split = Split::train;
    bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
    std::vector<ImageRecord> records;
    bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
    DatasetConfig config;
    std::vector<StyleSpec> styles;
    DatasetManifest manifest;
    std::vector<Image> images;  // parallel to manifest.records

    std::vector<std::size_t> indices(Split split) const;
};

// Number of eval images per style for a given content count.
int eval_contents(int contents);

// Pure, in-memory construction; deterministic in config.
Dataset build_dataset(const DatasetConfig& config);
// Writes images, manifest.jsonl and styles.jsonl under dir.
void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::string manifest_to_jsonl(const DatasetManifest& manifest);
DatasetManifest manifest_from_jsonl(const std::string& text);

// ---- contrastive pairs --------------------------------------------------

struct ImagePair {
    std::size_t first = 0;
    std::size_t second = 0;
    int label = 0;  // 1 same style, 0 different style
};

class PairSampler {
public:
    PairSampler(const Dataset& dataset, Split split);

    // positive: same style, different image. negative: different styles.
    ImagePair sample(CounterRng& rng, bool positive) const;
    std::size_t style_count() const { return by_style_.size(); }

private:
    const Dataset& dataset_;
    std::vector<std::vector<std::size_t>> by_style_;
    std::vector<std::size_t> pair_capable_;  // styles with >= 2 images
};

} // namespace stylecode::world
