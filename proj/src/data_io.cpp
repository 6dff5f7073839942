#include "stsa/data_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace stsa {

// ---------------------------------------------------------------- bytes

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n, std::string_view what) {
    if (remaining() < n) {
        throw FormatError("truncated " + std::string(what) + ": need " + std::to_string(n) +
                              " bytes, " + std::to_string(remaining()) + " left",
                          pos_);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
}

std::uint8_t ByteReader::u8() { return take(1, "u8")[0]; }

std::uint32_t ByteReader::u32() {
    auto b = take(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t ByteReader::u64() {
    auto b = take(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
    const std::uint32_t n = u32();
    auto b = take(n, "string");
    return std::string(b.begin(), b.end());
}

void ByteReader::expect_end() const {
    if (pos_ != bytes_.size()) {
        throw FormatError(std::to_string(remaining()) + " unexpected trailing bytes", pos_);
    }
}

// ---------------------------------------------------------------- tensors

template <typename T>
void encode_tensor(ByteWriter& out, const Tensor<T>& t) {
    if (t.rank() > 255) throw DimensionError("tensor rank exceeds the file format limit");
    for (char c : std::string_view("STSA")) out.u8(static_cast<std::uint8_t>(c));
    out.u32(kTensorFileVersion);
    out.u8(dtype_code<T>());
    out.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) {
        if (e > 0xFFFFFFFFu) throw DimensionError("extent exceeds the file format limit");
        out.u32(static_cast<std::uint32_t>(e));
    }
    for (T v : t.data()) {
        if constexpr (sizeof(T) == 4) {
            out.u32(std::bit_cast<std::uint32_t>(v));
        } else {
            out.u64(std::bit_cast<std::uint64_t>(v));
        }
    }
}

template <typename T>
Tensor<T> decode_tensor(ByteReader& in) {
    const std::size_t start = in.offset();
    auto magic = in.take(4, "magic");
    if (std::string(magic.begin(), magic.end()) != "STSA") throw FormatError("bad magic", start);
    const std::size_t version_at = in.offset();
    const std::uint32_t version = in.u32();
    if (version != kTensorFileVersion) {
        throw FormatError("unsupported version " + std::to_string(version), version_at);
    }
    const std::size_t dtype_at = in.offset();
    const std::uint8_t dtype = in.u8();
    if (dtype > 1) throw FormatError("unknown dtype code " + std::to_string(dtype), dtype_at);
    if (dtype != dtype_code<T>()) {
        throw FormatError(std::string("stored dtype is ") + (dtype == 0 ? "f32" : "f64") +
                              ", requested " + (dtype_code<T>() == 0 ? "f32" : "f64"),
                          dtype_at);
    }
    const std::size_t rank_at = in.offset();
    const std::uint8_t rank = in.u8();
    if (rank == 0) throw FormatError("rank must be at least 1", rank_at);
    Shape shape;
    std::size_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
        const std::size_t at = in.offset();
        const std::uint32_t e = in.u32();
        if (e == 0) throw FormatError("zero extent", at);
        shape.push_back(e);
        count *= e;
    }
    const std::size_t payload_at = in.offset();
    if (in.remaining() / sizeof(T) < count) {
        throw FormatError("payload holds " + std::to_string(in.remaining()) + " bytes, expected " +
                              std::to_string(count * sizeof(T)),
                          payload_at);
    }
    std::vector<T> data(count);
    for (auto& v : data) {
        if constexpr (sizeof(T) == 4) {
            v = std::bit_cast<float>(in.u32());
        } else {
            v = std::bit_cast<double>(in.u64());
        }
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

void write_text_file(const fs::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const fs::path& path) {
    auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

template <typename T>
void write_tensor(const fs::path& path, const Tensor<T>& t) {
    ByteWriter w;
    encode_tensor(w, t);
    write_file(path, w.bytes());
}

template <typename T>
Tensor<T> read_tensor(const fs::path& path) {
    const auto bytes = read_file(path);
    ByteReader r(bytes);
    try {
        Tensor<T> t = decode_tensor<T>(r);
        r.expect_end();
        return t;
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

// ---------------------------------------------------------------- pgm

std::string encode_pgm(const Tensor<double>& map) {
    if (map.rank() != 2) throw DimensionError("PGM export expects an (H,W) map, got " + to_string(map.shape()));
    const std::size_t h = map.shape()[0], w = map.shape()[1];
    double peak = 0.0;
    for (double v : map.data()) peak = std::max(peak, v);
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (double v : map.data()) {
        double p = peak > 0.0 ? std::floor(v / peak * 255.0 + 0.5) : 0.0;
        p = std::clamp(p, 0.0, 255.0);
        out.push_back(static_cast<char>(static_cast<std::uint8_t>(p)));
    }
    return out;
}

void write_pgm(const fs::path& path, const Tensor<double>& map) { write_text_file(path, encode_pgm(map)); }

// ---------------------------------------------------------------- text helpers

namespace {

std::string_view trim(std::string_view s) {
    const auto* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::string_view strip_comment(std::string_view line) {
    const auto hash = line.find('#');
    return trim(hash == std::string_view::npos ? line : line.substr(0, hash));
}

template <typename I>
bool parse_uint(std::string_view s, I& out) {
    s = trim(s);
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

bool parse_bool(std::string_view s, bool& out) {
    s = trim(s);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
    return false;
}

std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> items;
    std::size_t start = 0;
    while (true) {
        const auto c = s.find(',', start);
        items.push_back(trim(s.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start)));
        if (c == std::string_view::npos) break;
        start = c + 1;
    }
    return items;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

std::string_view bool_text(bool b) { return b ? "true" : "false"; }

using Setter = std::function<bool(RunConfig&, std::string_view)>;

template <typename I>
Setter uint_field(I ModelConfig::*field) {
    return [field](RunConfig& c, std::string_view v) { return parse_uint(v, c.model.*field); };
}

Setter bool_field(bool ModelConfig::*field) {
    return [field](RunConfig& c, std::string_view v) { return parse_bool(v, c.model.*field); };
}

const std::map<std::string, Setter, std::less<>>& config_setters() {
    static const std::map<std::string, Setter, std::less<>> setters = {
        {"t_in", uint_field(&ModelConfig::t_in)},
        {"height", uint_field(&ModelConfig::height)},
        {"width", uint_field(&ModelConfig::width)},
        {"channels",
         [](RunConfig& c, std::string_view v) {
             auto items = split_list(v);
             if (items.size() != 4) return false;
             for (std::size_t i = 0; i < 4; ++i) {
                 if (!parse_uint(items[i], c.model.channels[i])) return false;
             }
             return true;
         }},
        {"supervision",
         [](RunConfig& c, std::string_view v) {
             if (v == "middle") return c.model.supervision = Supervision::middle, true;
             if (v == "last") return c.model.supervision = Supervision::last, true;
             return false;
         }},
        {"variant",
         [](RunConfig& c, std::string_view v) {
             if (v == "full") return c.model.variant = StsaVariant::full, true;
             if (v == "no_temporal") return c.model.variant = StsaVariant::no_temporal_relations, true;
             if (v == "single_sim") return c.model.variant = StsaVariant::single_similarity, true;
             return false;
         }},
        {"stsa_layer1", bool_field(&ModelConfig::stsa_layer1)},
        {"stsa_layer2", bool_field(&ModelConfig::stsa_layer2)},
        {"stsa_branches",
         [](RunConfig& c, std::string_view v) {
             std::array<bool, 4> on{false, false, false, false};
             if (v != "none") {
                 for (auto item : split_list(v)) {
                     std::size_t b = 0;
                     if (!parse_uint(item, b) || b < 1 || b > 4) return false;
                     on[b - 1] = true;
                 }
             }
             c.model.stsa_branches = on;
             return true;
         }},
        {"bottleneck", bool_field(&ModelConfig::bottleneck)},
        {"attention_scaling", bool_field(&ModelConfig::attention_scaling)},
        {"attentional_weighting", bool_field(&ModelConfig::attentional_weighting)},
        {"multiscale", bool_field(&ModelConfig::multiscale)},
        {"fusion",
         [](RunConfig& c, std::string_view v) {
             if (v == "add") return c.model.fusion = FusionMode::addition, true;
             if (v == "concat") return c.model.fusion = FusionMode::concatenation, true;
             return false;
         }},
        {"relu_before_norm", bool_field(&ModelConfig::relu_before_norm)},
        {"micro", bool_field(&ModelConfig::micro)},
        {"seed", uint_field(&ModelConfig::seed)},
        {"batch", [](RunConfig& c, std::string_view v) { return parse_uint(v, c.train.batch); }},
        {"lr", [](RunConfig& c, std::string_view v) { return parse_double(v, c.train.lr); }},
        {"steps", [](RunConfig& c, std::string_view v) { return parse_uint(v, c.train.steps); }},
        {"lr_decay", [](RunConfig& c, std::string_view v) { return parse_bool(v, c.train.lr_decay); }},
    };
    return setters;
}

}  // namespace

// ---------------------------------------------------------------- config

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::set<std::string, std::less<>> seen;
    const auto& setters = config_setters();
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        const std::string_view line = strip_comment(lines[i]);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected `key = value`", line_no);
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) throw ParseError("unknown key `" + std::string(key) + "`", line_no);
        if (!seen.insert(std::string(key)).second) {
            throw ParseError("duplicate key `" + std::string(key) + "`", line_no);
        }
        if (!it->second(cfg, value)) {
            throw ParseError("invalid value `" + std::string(value) + "` for `" + std::string(key) + "`",
                             line_no);
        }
    }
    return cfg;
}

RunConfig read_config(const fs::path& path) {
    try {
        return parse_config(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.detail(), e.line());
    }
}

std::string format_config(const RunConfig& cfg) {
    const ModelConfig& m = cfg.model;
    std::ostringstream o;
    o << "t_in = " << m.t_in << "\n";
    o << "height = " << m.height << "\n";
    o << "width = " << m.width << "\n";
    o << "channels = " << m.channels[0] << "," << m.channels[1] << "," << m.channels[2] << ","
      << m.channels[3] << "\n";
    o << "supervision = " << to_string(m.supervision) << "\n";
    o << "variant = " << to_string(m.variant) << "\n";
    o << "stsa_layer1 = " << bool_text(m.stsa_layer1) << "\n";
    o << "stsa_layer2 = " << bool_text(m.stsa_layer2) << "\n";
    std::string branches;
    for (std::size_t b = 0; b < 4; ++b) {
        if (!m.stsa_branches[b]) continue;
        if (!branches.empty()) branches += ",";
        branches += std::to_string(b + 1);
    }
    o << "stsa_branches = " << (branches.empty() ? "none" : branches) << "\n";
    o << "bottleneck = " << bool_text(m.bottleneck) << "\n";
    o << "attention_scaling = " << bool_text(m.attention_scaling) << "\n";
    o << "attentional_weighting = " << bool_text(m.attentional_weighting) << "\n";
    o << "multiscale = " << bool_text(m.multiscale) << "\n";
    o << "fusion = " << to_string(m.fusion) << "\n";
    o << "relu_before_norm = " << bool_text(m.relu_before_norm) << "\n";
    o << "micro = " << bool_text(m.micro) << "\n";
    o << "seed = " << m.seed << "\n";
    o << "batch = " << cfg.train.batch << "\n";
    o << "lr = " << format_double(cfg.train.lr) << "\n";
    o << "steps = " << cfg.train.steps << "\n";
    o << "lr_decay = " << bool_text(cfg.train.lr_decay) << "\n";
    return o.str();
}

// ---------------------------------------------------------------- fixations

FixationTable parse_fixations(std::string_view text, std::size_t frames, std::size_t height,
                              std::size_t width) {
    FixationTable table(frames);
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        const std::string_view line = strip_comment(lines[i]);
        if (line.empty()) continue;
        std::vector<std::string_view> fields;
        std::size_t p = 0;
        while (p < line.size()) {
            while (p < line.size() && (line[p] == ' ' || line[p] == '\t')) ++p;
            std::size_t q = p;
            while (q < line.size() && line[q] != ' ' && line[q] != '\t') ++q;
            if (q > p) fields.push_back(line.substr(p, q - p));
            p = q;
        }
        if (fields.size() != 3) throw ParseError("expected `frame x y`, got `" + std::string(line) + "`", line_no);
        std::size_t f = 0, x = 0, y = 0;
        const char* names[] = {"frame", "x", "y"};
        std::size_t* dst[] = {&f, &x, &y};
        for (int k = 0; k < 3; ++k) {
            if (!parse_uint(fields[k], *dst[k])) {
                throw ParseError(std::string(names[k]) + " is not a non-negative integer: `" +
                                     std::string(fields[k]) + "`",
                                 line_no);
            }
        }
        if (f >= frames) {
            throw ParseError("frame " + std::to_string(f) + " out of range (" + std::to_string(frames) +
                                 " frames)",
                             line_no);
        }
        if (x >= width || y >= height) {
            throw ParseError("point (" + std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                                 std::to_string(width) + "x" + std::to_string(height),
                             line_no);
        }
        table[f].push_back(FixationPoint{x, y});
    }
    return table;
}

FixationTable read_fixations(const fs::path& path, std::size_t frames, std::size_t height,
                             std::size_t width) {
    try {
        return parse_fixations(read_text_file(path), frames, height, width);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.detail(), e.line());
    }
}

std::string format_fixations(const FixationTable& table) {
    std::string out;
    for (std::size_t f = 0; f < table.size(); ++f) {
        for (const auto& p : table[f]) {
            out += std::to_string(f) + " " + std::to_string(p.x) + " " + std::to_string(p.y) + "\n";
        }
    }
    return out;
}

void write_fixations(const fs::path& path, const FixationTable& table) {
    write_text_file(path, format_fixations(table));
}

#define STSA_INSTANTIATE(T)                                                  \
    template void encode_tensor<T>(ByteWriter&, const Tensor<T>&);          \
    template Tensor<T> decode_tensor<T>(ByteReader&);                       \
    template void write_tensor<T>(const fs::path&, const Tensor<T>&);       \
    template Tensor<T> read_tensor<T>(const fs::path&);

STSA_INSTANTIATE(float)
STSA_INSTANTIATE(double)

}  // namespace stsa
