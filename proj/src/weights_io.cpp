#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "tkc/io.hpp"

namespace tkc {

static_assert(std::endian::native == std::endian::little, "STDT I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'D', 'T'};

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }
    [[nodiscard]] std::size_t pos() const { return pos_; }

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            raise(ErrorCode::Truncated, fmt::format("truncated STDT data at offset {}: expected {} byte(s) of {}, "
                                                    "found {}",
                                                    pos_, n, what, bytes_.size() - pos_));
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_stdt(const std::vector<NamedTensor>& tensors, DType dtype) {
    std::string out(kMagic, 4);
    put<std::uint16_t>(out, kStdtVersion);
    std::set<std::string> seen;
    for (const auto& [name, t] : tensors) {
        require(seen.insert(name).second, ErrorCode::DuplicateName, "duplicate tensor name '" + name + "'");
        require(name.size() <= 0xFFFF, ErrorCode::InvalidArgument, "tensor name too long");
        require(t.rank() <= 0xFF, ErrorCode::InvalidArgument, "tensor '" + name + "' has too many dimensions");
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) {
            require(d <= 0xFFFFFFFFu, ErrorCode::InvalidArgument, "dimension too large for STDT");
            put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
        if (dtype == DType::F64) {
            for (double v : t.data()) put<double>(out, v);
        } else {
            for (double v : t.data()) put<float>(out, static_cast<float>(v));
        }
    }
    return out;
}

std::vector<NamedTensor> decode_stdt(std::string_view bytes) {
    Reader r(bytes);
    const auto magic = r.take(4, "magic");
    require(magic == std::string_view(kMagic, 4), ErrorCode::BadMagic, "not an STDT container (bad magic)");
    const auto version = r.get<std::uint16_t>("version");
    require(version == kStdtVersion, ErrorCode::VersionMismatch,
            fmt::format("unsupported STDT version {} (expected {})", version, kStdtVersion));

    std::vector<NamedTensor> out;
    std::set<std::string, std::less<>> seen;
    while (!r.done()) {
        const std::size_t record = r.pos();
        const auto len = r.get<std::uint16_t>("name length");
        std::string name(r.take(len, "name"));
        require(seen.insert(name).second, ErrorCode::DuplicateName,
                fmt::format("duplicate tensor name '{}' at offset {}", name, record));
        const auto ndim = r.get<std::uint8_t>("ndim");
        Shape shape(ndim);
        for (auto& d : shape) d = r.get<std::uint32_t>("dimension");
        std::size_t count = 1;
        for (std::size_t d : shape) {
            // anything past the remaining byte count is truncated anyway; cap to avoid overflow
            count = d == 0 ? 0 : std::min<std::size_t>(count * d, bytes.size() + 1);
            if (count == 0) break;
        }
        const std::size_t dtype_at = r.pos();
        const auto dtype = r.get<std::uint8_t>("dtype");
        const std::size_t width = dtype == 1 ? 4 : dtype == 2 ? 8 : 0;
        require(width != 0, ErrorCode::Parse, fmt::format("unknown dtype code {} at offset {}", dtype, dtype_at));
        const auto payload = r.take(count * width, "tensor payload");
        std::vector<double> data(count);
        for (std::size_t i = 0; i < count; ++i) {
            if (width == 8) {
                std::memcpy(&data[i], payload.data() + 8 * i, 8);
            } else {
                float f;
                std::memcpy(&f, payload.data() + 4 * i, 4);
                data[i] = f;
            }
        }
        out.push_back({std::move(name), DenseTensor(std::move(shape), std::move(data))});
    }
    return out;
}

void write_stdt(const std::string& path, const std::vector<NamedTensor>& tensors, DType dtype) {
    write_file_atomic(path, encode_stdt(tensors, dtype));
}

std::vector<NamedTensor> read_stdt(const std::string& path) {
    const std::string bytes = read_file(path);
    try {
        return decode_stdt(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::Io, "cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    require(!in.bad(), ErrorCode::Io, "error reading '" + path + "'");
    return std::move(ss).str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.parent_path() / ("." + target.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorCode::Io, "cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        require(out.good(), ErrorCode::Io, "error writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        raise(ErrorCode::Io, "cannot move output into place at '" + path + "'");
    }
}

}  // namespace tkc
