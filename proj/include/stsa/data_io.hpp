#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stsa/model_config.hpp"
#include "stsa/saliency.hpp"
#include "stsa/tensor.hpp"

namespace stsa {

namespace fs = std::filesystem;

// Tensor container: "STSA", u32 version, u8 dtype (0 = f32, 1 = f64),
// u8 rank, u32 extents, then the payload. Everything little-endian.
inline constexpr std::uint32_t kTensorFileVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() { return 0; }
template <>
constexpr std::uint8_t dtype_code<double>() { return 1; }

/// Little-endian byte sink.
class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void str(std::string_view s);  // u32 length + bytes
    void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Little-endian byte source; every failure is a FormatError at the offset
/// where decoding stopped.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    std::span<const std::uint8_t> take(std::size_t n, std::string_view what);

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    void expect_end() const;

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

template <typename T>
void encode_tensor(ByteWriter& out, const Tensor<T>& t);

/// Decodes one tensor; the stored dtype must match T.
template <typename T>
Tensor<T> decode_tensor(ByteReader& in);

template <typename T>
void write_tensor(const fs::path& path, const Tensor<T>& t);

template <typename T>
Tensor<T> read_tensor(const fs::path& path);

std::vector<std::uint8_t> read_file(const fs::path& path);
void write_file(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const fs::path& path, std::string_view text);
std::string read_text_file(const fs::path& path);

/// Binary PGM, header "P5\n<W> <H>\n255\n", pixels round(v / max * 255)
/// with halves rounded up. A map whose maximum is not positive maps to zeros.
std::string encode_pgm(const Tensor<double>& map);
void write_pgm(const fs::path& path, const Tensor<double>& map);

/// `key = value` lines, `#` starts a comment, unknown keys are rejected.
/// Keys not present keep their defaults.
RunConfig parse_config(std::string_view text);
RunConfig read_config(const fs::path& path);

/// Every key with its current value; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& cfg);

/// Per-frame fixation points.
using FixationTable = std::vector<std::vector<FixationPoint>>;

/// Lines `frame x y` with 0-based integers; `#` comments and blank lines are
/// skipped. Points must fall inside the frames x height x width volume.
FixationTable parse_fixations(std::string_view text, std::size_t frames, std::size_t height,
                              std::size_t width);
FixationTable read_fixations(const fs::path& path, std::size_t frames, std::size_t height,
                             std::size_t width);
std::string format_fixations(const FixationTable& table);
void write_fixations(const fs::path& path, const FixationTable& table);

}  // namespace stsa
