#include "csi/data/csib.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

#include "csi/error.hpp"

namespace csi::data {

using grad::Tensor;

namespace {

class Writer {
public:
    Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open '" + path + "' for writing");
        path_ = path;
    }
    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw IoError("write failure on '" + path_ + "'");
    }
    void u16(std::uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
        bytes(b, 2);
    }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        bytes(b, 4);
    }
    void f32(float v) {
        static_assert(sizeof(float) == 4);
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }

private:
    std::ofstream out_;
    std::string path_;
};

class Reader {
public:
    Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw IoError("cannot open '" + path + "' for reading");
    }
    std::size_t offset() const { return offset_; }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw IoError("'" + path_ + "' truncated at byte offset " + std::to_string(offset_));
        }
        offset_ += n;
    }
    std::uint16_t u16() {
        unsigned char b[2];
        bytes(b, 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    const std::string& path() const { return path_; }

private:
    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

struct Header {
    std::uint32_t n, a, k, t;
    std::uint16_t c;
};

void write_header(Writer& w, const std::vector<CsiSample>& samples, std::uint16_t version) {
    w.bytes("CSIB", 4);
    w.u16(version);
    std::uint32_t a = 0, k = 0, t = 0;
    std::uint16_t c = 0;
    if (!samples.empty()) {
        const Tensor& x = samples.front().amplitudes;
        if (x.rank() != 3) throw ShapeError("write_csib: samples must be (A,K,T)");
        a = static_cast<std::uint32_t>(x.dim(0));
        k = static_cast<std::uint32_t>(x.dim(1));
        t = static_cast<std::uint32_t>(x.dim(2));
        int maxlab = 0;
        for (const CsiSample& s : samples) {
            if (!s.amplitudes.same_shape(x)) throw ShapeError("write_csib: inconsistent sample shapes");
            if (s.label < 0 || s.label > std::numeric_limits<std::uint16_t>::max()) {
                throw ConfigError("write_csib: label out of range for u16");
            }
            maxlab = std::max(maxlab, s.label);
        }
        c = static_cast<std::uint16_t>(maxlab + 1);
    }
    w.u32(static_cast<std::uint32_t>(samples.size()));
    w.u32(a);
    w.u32(k);
    w.u32(t);
    w.u16(c);
}

void write_records(Writer& w, const std::vector<CsiSample>& samples) {
    for (const CsiSample& s : samples) {
        w.u16(static_cast<std::uint16_t>(s.label));
        for (std::size_t i = 0; i < s.amplitudes.size(); ++i) {
            w.f32(static_cast<float>(s.amplitudes[i]));
        }
    }
}

Header read_header(Reader& r, std::uint16_t expected_version) {
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "CSIB", 4) != 0) {
        throw IoError("'" + r.path() + "': bad magic at byte offset 0");
    }
    const std::uint16_t version = r.u16();
    if (version != expected_version) {
        throw IoError("'" + r.path() + "': unsupported version " + std::to_string(version) +
                      " at byte offset 4 (expected " + std::to_string(expected_version) + ")");
    }
    Header h;
    h.n = r.u32();
    h.a = r.u32();
    h.k = r.u32();
    h.t = r.u32();
    h.c = r.u16();
    if (h.n > 0) {
        if (h.a == 0 || h.k == 0 || h.t == 0) {
            throw IoError("'" + r.path() + "': zero dimension in header at byte offset 6");
        }
        const std::uint64_t numel = static_cast<std::uint64_t>(h.a) * h.k * h.t;
        if (numel > (1ULL << 31)) {
            throw IoError("'" + r.path() + "': tensor dimensions overflow at byte offset 6");
        }
    }
    return h;
}

std::vector<CsiSample> read_records(Reader& r, const Header& h) {
    std::vector<CsiSample> samples;
    samples.reserve(h.n);
    const std::size_t numel = static_cast<std::size_t>(h.a) * h.k * h.t;
    for (std::uint32_t i = 0; i < h.n; ++i) {
        const std::uint16_t label = r.u16();
        if (h.c > 0 && label >= h.c) {
            throw IoError("'" + r.path() + "': label " + std::to_string(label) +
                          " out of range at byte offset " + std::to_string(r.offset() - 2));
        }
        std::vector<double> data(numel);
        for (std::size_t q = 0; q < numel; ++q) data[q] = static_cast<double>(r.f32());
        samples.push_back(CsiSample{
            Tensor({static_cast<int>(h.a), static_cast<int>(h.k), static_cast<int>(h.t)}, std::move(data)),
            static_cast<int>(label)});
    }
    return samples;
}

} // namespace

void write_csib(const std::vector<CsiSample>& samples, const std::string& path) {
    Writer w(path);
    write_header(w, samples, kCsibVersion);
    write_records(w, samples);
}

std::vector<CsiSample> read_csib(const std::string& path) {
    Reader r(path);
    const Header h = read_header(r, kCsibVersion);
    return read_records(r, h);
}

void write_adv_batch(const AdvBatch& batch, const std::string& path) {
    if (batch.samples.size() != batch.clean_index.size()) {
        throw ConfigError("write_adv_batch: index list must pair one-to-one with samples");
    }
    Writer w(path);
    write_header(w, batch.samples, kCsibAdvVersion);
    for (const std::uint32_t idx : batch.clean_index) w.u32(idx);
    write_records(w, batch.samples);
}

AdvBatch read_adv_batch(const std::string& path) {
    Reader r(path);
    const Header h = read_header(r, kCsibAdvVersion);
    AdvBatch batch;
    batch.clean_index.resize(h.n);
    for (std::uint32_t i = 0; i < h.n; ++i) batch.clean_index[i] = r.u32();
    batch.samples = read_records(r, h);
    return batch;
}

} // namespace csi::data
