#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "numerics/tensor.hpp"

namespace stylecode::nn {

// Binary tensor container:
//   "CTYL" | u16 version | records...
//   record = u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload
// All integers and floats little-endian; records run to end of stream.
inline constexpr char kCheckpointMagic[4] = {'C', 'T', 'Y', 'L'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TensorRecord {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void write_checkpoint(std::ostream& out, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> load_checkpoint(const std::string& path);

std::vector<TensorRecord> to_records(const ParamList<float>& params);
// Copies matching records into params; every param must be present with its exact shape.
void assign_records(const std::vector<TensorRecord>& records, const ParamList<float>& params);
const TensorRecord* find_record(const std::vector<TensorRecord>& records, const std::string& name);
const TensorRecord& require_record(const std::vector<TensorRecord>& records, const std::string& name);

// Integers ride in f32 payloads as four 16-bit limbs each, low limb first.
TensorRecord u64_record(const std::string& name, const std::vector<std::uint64_t>& values);
std::vector<std::uint64_t> record_u64(const TensorRecord& record);

} // namespace stylecode::nn
