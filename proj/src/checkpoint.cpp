#include "adsc/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace adsc {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'S', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i64(std::string& out, std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_i64(out, std::bit_cast<std::int64_t>(v)); }

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw Error("checkpoint file is truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::int64_t i64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return static_cast<std::int64_t>(v);
    }
    double f64() { return std::bit_cast<double>(i64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Parameters& params) {
    // the views only read here
    auto views = tensor_views(const_cast<Parameters&>(params));

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    const auto& c = params.config;
    put_i64(out, c.depth);
    put_i64(out, c.width);
    put_i64(out, c.heads);
    put_i64(out, c.ffn_width);
    put_i64(out, c.vocab);
    put_i64(out, c.max_positions);
    put_i64(out, c.vision_width);
    put_i64(out, c.lora_rank);
    put_f64(out, c.lora_scale);
    out.push_back(c.gated_ffn ? 1 : 0);
    out.push_back(c.pos_encoding == PosEncoding::kLearned ? 1 : 0);

    put_u32(out, static_cast<std::uint32_t>(views.size()));
    for (const auto& v : views) {
        put_u32(out, static_cast<std::uint32_t>(v.name.size()));
        out += v.name;
        put_u32(out, static_cast<std::uint32_t>(v.rank));
        if (v.rank == 2) {
            put_i64(out, v.rows);
            put_i64(out, v.cols);
        } else {
            put_i64(out, v.size());
        }
        for (std::int64_t i = 0; i < v.rows; ++i)
            for (std::int64_t j = 0; j < v.cols; ++j) put_f64(out, v.at(i, j));
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot open checkpoint file for writing: " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        f.flush();
        if (!f) throw Error("write failed for checkpoint file: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error("cannot move checkpoint into place: " + ec.message());
}

Parameters load_checkpoint(const std::string& path) {
    std::string buf;
    {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw Error("cannot open checkpoint file: " + path);
        buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    Cursor cur{buf};

    if (cur.bytes(4) != std::string(kMagic, 4))
        throw Error("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = cur.u32();
    if (version != kVersion)
        throw Error("unsupported checkpoint version " + std::to_string(version));

    ModelConfig c;
    c.depth = cur.i64();
    c.width = cur.i64();
    c.heads = cur.i64();
    c.ffn_width = cur.i64();
    c.vocab = cur.i64();
    c.max_positions = cur.i64();
    c.vision_width = cur.i64();
    c.lora_rank = cur.i64();
    c.lora_scale = cur.f64();
    c.gated_ffn = cur.bytes(1)[0] != 0;
    c.pos_encoding = cur.bytes(1)[0] != 0 ? PosEncoding::kLearned : PosEncoding::kRope;
    c.validate();

    Parameters p = zero_parameters(c);
    auto views = tensor_views(p);
    std::map<std::string, TensorView*> by_name;
    for (auto& v : views) by_name[v.name] = &v;

    const std::uint32_t count = cur.u32();
    if (count != views.size()) throw Error("checkpoint tensor count does not match the config");
    std::map<std::string, bool> seen;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string name = cur.bytes(cur.u32());
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint holds unknown tensor: " + name);
        if (seen[name]) throw Error("checkpoint repeats tensor: " + name);
        seen[name] = true;
        TensorView& v = *it->second;

        const std::uint32_t rank = cur.u32();
        if (static_cast<int>(rank) != v.rank)
            throw Error("rank mismatch for tensor: " + name);
        if (rank == 2) {
            if (cur.i64() != v.rows || cur.i64() != v.cols)
                throw Error("shape mismatch for tensor: " + name);
        } else {
            if (cur.i64() != v.size()) throw Error("shape mismatch for tensor: " + name);
        }
        for (std::int64_t i = 0; i < v.rows; ++i)
            for (std::int64_t j = 0; j < v.cols; ++j) v.at(i, j) = cur.f64();
    }
    if (cur.pos != buf.size()) throw Error("trailing bytes after checkpoint payload");
    return p;
}

}  // namespace adsc
