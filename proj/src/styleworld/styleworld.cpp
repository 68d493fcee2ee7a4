#include "styleworld/styleworld.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace stylecode::world {

using nlohmann::json;

// ---- vocabulary ---------------------------------------------------------

const std::array<std::string, kVocabSize>& vocabulary() {
    static const std::array<std::string, kVocabSize> words = [] {
        std::array<std::string, kVocabSize> w;
        const char* named[] = {"<pad>",     "one",      "two",          "three",  "circle",      "square",
                               "triangle",  "circles",  "squares",      "triangles", "top-left", "top",
                               "top-right", "left",     "center",       "right",  "bottom-left", "bottom",
                               "bottom-right", "small", "medium",       "large",  "a",           "and",
                               "with",      "at",       "in",           "the",    "of",          "on",
                               "near",      "shape",    "shapes",       "scene",  "image",       "picture"};
        std::size_t i = 0;
        for (const char* n : named) w[i++] = n;
        for (; i < kVocabSize; ++i) w[i] = "<r" + std::to_string(i) + ">";
        return w;
    }();
    return words;
}

namespace {

constexpr std::int32_t kCountBase = 1;     // one, two, three
constexpr std::int32_t kKindBase = 4;      // circle, square, triangle
constexpr std::int32_t kPositionBase = 10; // 3x3 grid, row-major
constexpr std::int32_t kSizeBase = 19;     // small, medium, large

const char* texture_name(Texture t) {
    switch (t) {
        case Texture::plain: return "plain";
        case Texture::stripes: return "stripes";
        case Texture::dots: return "dots";
        case Texture::checker: return "checker";
        case Texture::gradient: return "gradient";
    }
    return "plain";
}

Texture texture_from(const std::string& s) {
    for (auto t : {Texture::plain, Texture::stripes, Texture::dots, Texture::checker, Texture::gradient})
        if (s == texture_name(t)) return t;
    throw std::invalid_argument("unknown texture: " + s);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

} // namespace

std::vector<std::int32_t> parse_caption(const std::string& text) {
    const auto& vocab = vocabulary();
    std::vector<std::int32_t> tokens;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
        auto it = std::find(vocab.begin(), vocab.end(), word);
        if (it == vocab.end() || word.front() == '<') throw std::invalid_argument("unknown caption word: " + word);
        tokens.push_back(static_cast<std::int32_t>(it - vocab.begin()));
    }
    tokens.resize(kCaptionLength, kPadToken);
    return tokens;
}

std::string caption_text(std::span<const std::int32_t> tokens) {
    std::string out;
    for (auto t : tokens) {
        if (t == kPadToken) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= kVocabSize) throw std::out_of_range("caption token out of range");
        if (!out.empty()) out += ' ';
        out += vocabulary()[static_cast<std::size_t>(t)];
    }
    return out;
}

std::vector<std::int32_t> describe(const std::vector<Shape2D>& shapes, int size) {
    std::vector<std::int32_t> tokens;
    tokens.push_back(kCountBase + static_cast<std::int32_t>(shapes.size()) - 1);
    for (const auto& s : shapes) {
        const int rel = s.radius * 32 / size;  // size-independent radius class
        tokens.push_back(kSizeBase + (rel <= 3 ? 0 : rel <= 4 ? 1 : 2));
        tokens.push_back(kKindBase + static_cast<std::int32_t>(s.kind));
        const int col = std::min(2, s.cx * 3 / size);
        const int row = std::min(2, s.cy * 3 / size);
        tokens.push_back(kPositionBase + row * 3 + col);
    }
    tokens.resize(kCaptionLength, kPadToken);
    return tokens;
}

// ---- rendering ----------------------------------------------------------

bool valid_size(int size) { return size == 32 || size == 48 || size == 64; }

void validate(const StyleSpec& style, int size) {
    if (style.texture_period < 2) throw std::invalid_argument("texture_period must be >= 2");
    if (style.border && (style.border->width < 1 || style.border->width * 4 >= size))
        throw std::invalid_argument("border width must be in [1, size/4)");
}

namespace {

Rgb texture_color(const StyleSpec& style, int x, int y, int size) {
    const int period = style.texture_period;
    const int phase = static_cast<int>(style.jitter_seed % static_cast<std::uint64_t>(period));
    const int half = std::max(1, period / 2);
    const auto& p = style.palette;
    switch (style.texture) {
        case Texture::plain:
            return p[0];
        case Texture::stripes:
            return ((y + phase) / half) % 2 ? p[1] : p[0];
        case Texture::checker:
            return (((x + phase) / half) + ((y + phase) / half)) % 2 ? p[1] : p[0];
        case Texture::dots: {
            const int dx = (x + phase) % period - period / 2;
            const int dy = (y + phase) % period - period / 2;
            const int r = std::max(1, period / 4);
            return dx * dx + dy * dy <= r * r ? p[1] : p[0];
        }
        case Texture::gradient: {
            auto lerp = [&](std::uint8_t a, std::uint8_t b) {
                const int v = a * (size - 1 - y) + b * y;
                return static_cast<std::uint8_t>((v + (size - 1) / 2) / (size - 1));
            };
            return {lerp(p[0].r, p[1].r), lerp(p[0].g, p[1].g), lerp(p[0].b, p[1].b)};
        }
    }
    return p[0];
}

bool inside(const Shape2D& s, int x, int y) {
    const int dx = x - s.cx, dy = y - s.cy;
    switch (s.kind) {
        case ShapeKind::circle: return dx * dx + dy * dy <= s.radius * s.radius;
        case ShapeKind::square: return std::abs(dx) <= s.radius && std::abs(dy) <= s.radius;
        case ShapeKind::triangle: {
            const int depth = y - (s.cy - s.radius);  // rows below the apex
            return depth >= 0 && dy <= s.radius && 2 * std::abs(dx) <= depth;
        }
    }
    return false;
}

} // namespace

Image render(const StyleSpec& style, const ContentSpec& content, int size) {
    if (!valid_size(size)) throw std::invalid_argument("image size must be 32, 48 or 64");
    validate(style, size);
    for (const auto& s : content.shapes) {
        if (s.radius < 1 || s.cx - s.radius < 0 || s.cy - s.radius < 0 || s.cx + s.radius >= size ||
            s.cy + s.radius >= size)
            throw std::invalid_argument("shape extends outside the canvas");
    }
    Image img(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            Rgb c = texture_color(style, x, y, size);
            for (const auto& s : content.shapes)
                if (inside(s, x, y)) c = style.palette[2];
            if (style.border) {
                const int edge = std::min({x, y, size - 1 - x, size - 1 - y});
                if (edge < style.border->width) c = style.border->color;
            }
            auto* px = img.pixel(x, y);
            px[0] = c.r;
            px[1] = c.g;
            px[2] = c.b;
        }
    }
    return img;
}

namespace {

Rgb random_rgb(CounterRng& rng, int lo = 0, int hi = 255) {
    auto ch = [&] { return static_cast<std::uint8_t>(lo + rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1))); };
    const auto r = ch();
    const auto g = ch();
    return {r, g, ch()};
}

int l1(Rgb a, Rgb b) { return std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b); }

Rgb contrasting(CounterRng& rng, Rgb against, int min_l1) {
    for (;;) {
        const Rgb c = random_rgb(rng);
        if (l1(c, against) >= min_l1) return c;
    }
}

} // namespace

StyleSpec random_style(int style_id, CounterRng& rng, int size) {
    StyleSpec s;
    s.style_id = style_id;
    s.palette[0] = random_rgb(rng);
    s.palette[1] = contrasting(rng, s.palette[0], 150);
    s.palette[2] = contrasting(rng, s.palette[0], 150);
    s.texture = static_cast<Texture>(rng.uniform_int(5));
    s.texture_period = 4 + 2 * static_cast<int>(rng.uniform_int(3));
    if (rng.bernoulli(0.25)) {
        // light, slightly tinted frame
        s.border = Border{random_rgb(rng, 215, 255), 1 + static_cast<int>(rng.uniform_int(std::min(3, (size - 1) / 4)))};
    }
    s.jitter_seed = rng.next_u32();
    return s;
}

ContentSpec random_content(CounterRng& rng, int size) {
    ContentSpec c;
    const int count = 1 + static_cast<int>(rng.uniform_int(3));
    const int rmin = 3 * size / 32, rmax = 5 * size / 32;
    // shapes stay off the outermost two pixels so corners remain background or border
    constexpr int margin = 2;
    for (int i = 0; i < count; ++i) {
        Shape2D s;
        s.kind = static_cast<ShapeKind>(rng.uniform_int(3));
        s.radius = rmin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(rmax - rmin + 1)));
        const int lo = margin + s.radius, hi = size - 1 - margin - s.radius;
        s.cx = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
        s.cy = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
        c.shapes.push_back(s);
    }
    c.caption_tokens = describe(c.shapes, size);
    return c;
}

std::uint64_t content_hash(const ContentSpec& content) {
    // FNV-1a over the geometry
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&](std::int64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= static_cast<std::uint8_t>(v >> (8 * i));
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& s : content.shapes) {
        feed(static_cast<int>(s.kind));
        feed(s.cx);
        feed(s.cy);
        feed(s.radius);
    }
    return h;
}

// ---- dataset ------------------------------------------------------------

int eval_contents(int contents) { return contents >= 12 ? contents / 6 : 0; }

std::vector<std::size_t> Dataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        if (manifest.records[i].split == split) out.push_back(i);
    return out;
}

Dataset build_dataset(const DatasetConfig& config) {
    if (config.styles < 1 || config.contents < 1) throw std::invalid_argument("dataset needs >= 1 style and content");
    if (!valid_size(config.size)) throw std::invalid_argument("image size must be 32, 48 or 64");
    Dataset ds;
    ds.config = config;
    const int n_eval = eval_contents(config.contents);
    for (int s = 0; s < config.styles; ++s) {
        CounterRng style_rng(mix_seed(config.seed, static_cast<std::uint64_t>(s)), 1);
        ds.styles.push_back(random_style(s, style_rng, config.size));
    }
    std::unordered_set<std::uint64_t> seen;
    for (int s = 0; s < config.styles; ++s) {
        for (int c = 0; c < config.contents; ++c) {
            CounterRng content_rng(mix_seed(config.seed, static_cast<std::uint64_t>(s) * config.contents + c), 2);
            // every image gets a scene no other image uses, so eval content never appears in train
            ContentSpec content = random_content(content_rng, config.size);
            while (!seen.insert(content_hash(content)).second) content = random_content(content_rng, config.size);
            ImageRecord rec;
            char name[64];
            std::snprintf(name, sizeof name, "img_%03d_%03d.ppm", s, c);
            rec.path = name;
            rec.style_id = s;
            rec.content_hash = content_hash(content);
            rec.caption_tokens = content.caption_tokens;
            rec.split = c >= config.contents - n_eval ? Split::eval : Split::train;
            ds.manifest.records.push_back(std::move(rec));
            ds.images.push_back(render(ds.styles[static_cast<std::size_t>(s)], content, config.size));
        }
    }
    return ds;
}

namespace {

json style_json(const StyleSpec& s) {
    json palette = json::array();
    for (const auto& c : s.palette) palette.push_back({c.r, c.g, c.b});
    json j = {{"style_id", s.style_id},
              {"palette", palette},
              {"texture", texture_name(s.texture)},
              {"texture_period", s.texture_period},
              {"jitter_seed", s.jitter_seed}};
    if (s.border)
        j["border"] = {{"color", {s.border->color.r, s.border->color.g, s.border->color.b}}, {"width", s.border->width}};
    else
        j["border"] = nullptr;
    return j;
}

StyleSpec style_from_json(const json& j) {
    StyleSpec s;
    s.style_id = j.at("style_id").get<int>();
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& c = j.at("palette").at(i);
        s.palette[i] = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()};
    }
    s.texture = texture_from(j.at("texture").get<std::string>());
    s.texture_period = j.at("texture_period").get<int>();
    s.jitter_seed = j.at("jitter_seed").get<std::uint64_t>();
    if (!j.at("border").is_null()) {
        const auto& b = j.at("border");
        const auto& c = b.at("color");
        s.border = Border{{c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()},
                          b.at("width").get<int>()};
    }
    return s;
}

} // namespace

std::string manifest_to_jsonl(const DatasetManifest& manifest) {
    std::string out;
    for (const auto& r : manifest.records) {
        json j = {{"path", r.path},
                  {"style_id", r.style_id},
                  {"content_hash", hex64(r.content_hash)},
                  {"caption_tokens", r.caption_tokens},
                  {"split", r.split == Split::train ? "train" : "eval"}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

DatasetManifest manifest_from_jsonl(const std::string& text) {
    DatasetManifest m;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            ImageRecord r;
            r.path = j.at("path").get<std::string>();
            r.style_id = j.at("style_id").get<int>();
            r.content_hash = parse_hex64(j.at("content_hash").get<std::string>());
            r.caption_tokens = j.at("caption_tokens").get<std::vector<std::int32_t>>();
            const auto split = j.at("split").get<std::string>();
            if (split != "train" && split != "eval") throw std::invalid_argument("bad split tag " + split);
            r.split = split == "train" ? Split::train : Split::eval;
            m.records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::invalid_argument("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return m;
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory: " + dir);
    for (std::size_t i = 0; i < dataset.images.size(); ++i)
        write_ppm((fs::path(dir) / dataset.manifest.records[i].path).string(), dataset.images[i]);
    std::ofstream manifest((fs::path(dir) / "manifest.jsonl").string(), std::ios::trunc);
    manifest << manifest_to_jsonl(dataset.manifest);
    std::ofstream styles((fs::path(dir) / "styles.jsonl").string(), std::ios::trunc);
    for (const auto& s : dataset.styles) styles << style_json(s).dump() << '\n';
    json cfg = {{"styles", dataset.config.styles},
                {"contents", dataset.config.contents},
                {"size", dataset.config.size},
                {"seed", dataset.config.seed}};
    std::ofstream meta((fs::path(dir) / "dataset.json").string(), std::ios::trunc);
    meta << cfg.dump() << '\n';
    if (!manifest || !styles || !meta) throw std::runtime_error("failed writing dataset metadata in " + dir);
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    auto slurp = [&](const char* name) {
        std::ifstream in((fs::path(dir) / name).string());
        if (!in) throw std::runtime_error(std::string("cannot read ") + name + " in " + dir);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    Dataset ds;
    const json cfg = json::parse(slurp("dataset.json"));
    ds.config.styles = cfg.at("styles").get<int>();
    ds.config.contents = cfg.at("contents").get<int>();
    ds.config.size = cfg.at("size").get<int>();
    ds.config.seed = cfg.at("seed").get<std::uint64_t>();
    ds.manifest = manifest_from_jsonl(slurp("manifest.jsonl"));
    std::istringstream styles(slurp("styles.jsonl"));
    std::string line;
    while (std::getline(styles, line))
        if (!line.empty()) ds.styles.push_back(style_from_json(json::parse(line)));
    for (const auto& r : ds.manifest.records) {
        ds.images.push_back(read_ppm((fs::path(dir) / r.path).string()));
        if (ds.images.back().width != ds.config.size || ds.images.back().height != ds.config.size)
            throw std::runtime_error("image " + r.path + " does not match dataset size");
    }
    return ds;
}

// ---- pairs --------------------------------------------------------------

PairSampler::PairSampler(const Dataset& dataset, Split split) : dataset_(dataset) {
    int max_style = -1;
    for (const auto& r : dataset.manifest.records) max_style = std::max(max_style, r.style_id);
    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(max_style + 1));
    for (auto i : dataset.indices(split))
        buckets[static_cast<std::size_t>(dataset.manifest.records[i].style_id)].push_back(i);
    for (auto& b : buckets)
        if (!b.empty()) by_style_.push_back(std::move(b));
    for (std::size_t s = 0; s < by_style_.size(); ++s)
        if (by_style_[s].size() >= 2) pair_capable_.push_back(s);
}

ImagePair PairSampler::sample(CounterRng& rng, bool positive) const {
    if (positive) {
        if (pair_capable_.empty()) throw std::runtime_error("no style has two images for a positive pair");
        const auto& imgs = by_style_[pair_capable_[rng.uniform_int(pair_capable_.size())]];
        const auto a = rng.uniform_int(imgs.size());
        auto b = rng.uniform_int(imgs.size() - 1);
        if (b >= a) ++b;
        return {imgs[a], imgs[b], 1};
    }
    if (by_style_.size() < 2) throw std::runtime_error("negative pairs need at least two styles");
    const auto sa = rng.uniform_int(by_style_.size());
    auto sb = rng.uniform_int(by_style_.size() - 1);
    if (sb >= sa) ++sb;
    const auto& ia = by_style_[sa];
    const auto& ib = by_style_[sb];
    return {ia[rng.uniform_int(ia.size())], ib[rng.uniform_int(ib.size())], 0};
}

} // namespace stylecode::world
