#include "styleworld/image.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace stylecode {

std::vector<std::uint8_t> encode_ppm(const Image& image) {
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.rgb.begin(), image.rgb.end());
    return out;
}

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    int next_int() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw std::invalid_argument("malformed PPM header");
        long value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_++] - '0');
            if (value > 1 << 20) throw std::invalid_argument("PPM dimension too large");
        }
        return static_cast<int>(value);
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw std::invalid_argument("not a binary PPM (P6)");
    HeaderReader reader(bytes);
    reader.advance(2);
    const int w = reader.next_int();
    const int h = reader.next_int();
    const int maxval = reader.next_int();
    if (maxval != 255) throw std::invalid_argument("only 8-bit PPM (maxval 255) is supported");
    if (w <= 0 || h <= 0) throw std::invalid_argument("PPM has empty dimensions");
    // exactly one whitespace byte separates header and raster
    std::size_t start = reader.pos() + 1;
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (start > bytes.size() || bytes.size() - start < need) throw std::invalid_argument("truncated PPM raster");
    Image img(w, h);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(start), need, img.rgb.begin());
    return img;
}

void write_ppm(const std::string& path, const Image& image) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write image: " + path);
    const auto bytes = encode_ppm(image);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing image: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read image: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_ppm(bytes);
}

} // namespace stylecode
