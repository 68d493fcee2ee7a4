#include "numerics/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace stylecode::nn {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::ostream& out, U value) {
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
bool get_le(std::istream& in, U& value) {
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) return false;
    value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
    return true;
}

template <typename U>
void get_le_or_throw(std::istream& in, U& value, const char* what) {
    if (!get_le(in, value)) throw FormatError(std::string("truncated checkpoint while reading ") + what);
}

} // namespace

void write_checkpoint(std::ostream& out, const std::vector<TensorRecord>& records) {
    out.write(kCheckpointMagic, 4);
    put_le<std::uint16_t>(out, kCheckpointVersion);
    for (const auto& r : records) {
        if (r.name.size() > UINT16_MAX) throw FormatError("tensor name too long: " + r.name.substr(0, 32));
        if (r.shape.size() > UINT8_MAX) throw FormatError("tensor rank too large: " + r.name);
        if (shape_numel(r.shape) != r.data.size()) throw FormatError("tensor payload/shape mismatch: " + r.name);
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.shape.size()));
        for (auto d : r.shape) {
            if (d > UINT32_MAX) throw FormatError("tensor dimension too large: " + r.name);
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        for (float f : r.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint stream");
}

std::vector<TensorRecord> read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("not a checkpoint: bad magic bytes");
    std::uint16_t version = 0;
    get_le_or_throw(in, version, "version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));

    std::vector<TensorRecord> records;
    for (;;) {
        std::uint16_t name_len = 0;
        if (!get_le(in, name_len)) {
            if (in.eof() && in.gcount() == 0) break;
            throw FormatError("truncated checkpoint record header");
        }
        TensorRecord r;
        r.name.resize(name_len);
        if (!in.read(r.name.data(), name_len)) throw FormatError("truncated tensor name");
        std::uint8_t rank = 0;
        get_le_or_throw(in, rank, "rank");
        for (std::uint8_t i = 0; i < rank; ++i) {
            std::uint32_t d = 0;
            get_le_or_throw(in, d, "dims");
            r.shape.push_back(d);
        }
        r.data.resize(shape_numel(r.shape));
        for (auto& f : r.data) {
            std::uint32_t bits = 0;
            get_le_or_throw(in, bits, "payload");
            f = std::bit_cast<float>(bits);
        }
        records.push_back(std::move(r));
    }
    return records;
}

void save_checkpoint(const std::string& path, const std::vector<TensorRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    write_checkpoint(out, records);
}

std::vector<TensorRecord> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    return read_checkpoint(in);
}

std::vector<TensorRecord> to_records(const ParamList<float>& params) {
    std::vector<TensorRecord> out;
    out.reserve(params.size());
    for (const auto& p : params)
        out.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
    return out;
}

const TensorRecord* find_record(const std::vector<TensorRecord>& records, const std::string& name) {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

const TensorRecord& require_record(const std::vector<TensorRecord>& records, const std::string& name) {
    const TensorRecord* r = find_record(records, name);
    if (!r) throw FormatError("checkpoint is missing tensor " + name);
    return *r;
}

TensorRecord u64_record(const std::string& name, const std::vector<std::uint64_t>& values) {
    TensorRecord r{name, {values.size(), 4}, {}};
    for (auto v : values)
        for (int limb = 0; limb < 4; ++limb) r.data.push_back(static_cast<float>((v >> (16 * limb)) & 0xffff));
    return r;
}

std::vector<std::uint64_t> record_u64(const TensorRecord& record) {
    if (record.shape.size() != 2 || record.shape[1] != 4)
        throw FormatError("tensor " + record.name + " is not an integer record");
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < record.shape[0]; ++i) {
        std::uint64_t v = 0;
        for (int limb = 0; limb < 4; ++limb) {
            const float f = record.data[i * 4 + static_cast<std::size_t>(limb)];
            if (!(f >= 0.0f && f <= 65535.0f) || f != static_cast<float>(static_cast<std::uint32_t>(f)))
                throw FormatError("tensor " + record.name + " holds a malformed integer limb");
            v |= static_cast<std::uint64_t>(f) << (16 * limb);
        }
        out.push_back(v);
    }
    return out;
}

void assign_records(const std::vector<TensorRecord>& records, const ParamList<float>& params) {
    for (const auto& p : params) {
        const TensorRecord* r = find_record(records, p.name);
        if (!r) throw FormatError("checkpoint is missing tensor " + p.name);
        if (r->shape != p.tensor.shape())
            throw FormatError("checkpoint tensor " + p.name + " has shape " + shape_str(r->shape) + ", expected " +
                              shape_str(p.tensor.shape()));
        auto dst = Tensor<float>(p.tensor).mutable_data();
        std::copy(r->data.begin(), r->data.end(), dst.begin());
    }
}

} // namespace stylecode::nn
