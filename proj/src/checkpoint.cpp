#include "tsf/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace tsf {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'F', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw DataError("checkpoint: truncated file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const NamedParams& params, const std::string& meta) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, 8);
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, p] : params) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(p->shape().size()));
        for (int d : p->shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : p->data()) put_f64(out, v);
    }
    if (!out) throw DataError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("checkpoint: bad magic in " + path);
    }
    Checkpoint ck;
    const std::uint32_t meta_len = get_u32(in);
    ck.meta.resize(meta_len);
    in.read(ck.meta.data(), meta_len);
    if (!in) throw DataError("checkpoint: truncated meta");
    const std::uint32_t count = get_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw DataError("checkpoint: truncated name");
        const std::uint32_t rank = get_u32(in);
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(get_u32(in));
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        for (auto& v : data) v = get_f64(in);
        ck.order.push_back(name);
        ck.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return ck;
}

void restore_params(const Checkpoint& ck, NamedParams& params) {
    for (auto& [name, p] : params) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw DataError("checkpoint: missing tensor " + name);
        if (it->second.shape() != p->shape()) {
            throw DataError("checkpoint: shape mismatch for " + name + ": file " +
                            shape_str(it->second.shape()) + " vs model " + shape_str(p->shape()));
        }
        p->data() = it->second.data();
    }
}

} // namespace tsf
