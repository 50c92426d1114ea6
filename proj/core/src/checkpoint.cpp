#include "dpiqa/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "dpiqa/common.hpp"
#include "dpiqa/rng.hpp"

namespace dpiqa {

namespace {

constexpr char kMagic[8] = {'D', 'P', 'I', 'Q', 'A', 'C', 'P', '1'};

void append_u64(std::string& buf, uint64_t v) {
    char bytes[8];
    std::memcpy(bytes, &v, 8);
    buf.append(bytes, 8);
}

void append_i64(std::string& buf, int64_t v) {
    char bytes[8];
    std::memcpy(bytes, &v, 8);
    buf.append(bytes, 8);
}

void append_f64(std::string& buf, const double* data, int64_t count) {
    buf.append(reinterpret_cast<const char*>(data), static_cast<size_t>(count) * sizeof(double));
}

// bounds-checked little-endian reader over a loaded file image
struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        check(pos + n <= buf.size(), "checkpoint is truncated (needed ", n, " bytes at offset ",
              pos, ")");
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    std::string bytes(uint64_t n) {
        check(n <= buf.size() - pos, "checkpoint is truncated (needed ", n, " bytes at offset ",
              pos, ")");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    std::vector<double> doubles(uint64_t count) {
        const uint64_t n = count * sizeof(double);
        check(n <= buf.size() - pos, "checkpoint is truncated (needed ", n, " bytes at offset ",
              pos, ")");
        std::vector<double> v(count);
        std::memcpy(v.data(), buf.data() + pos, n);
        pos += n;
        return v;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "cannot open checkpoint ", path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    check(!in.bad(), "failed reading checkpoint ", path);
    return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const KVMap& meta,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::string buf;
    buf.append(kMagic, 8);
    const std::string meta_text = serialize_kv(meta);
    append_u64(buf, meta_text.size());
    buf += meta_text;
    append_u64(buf, tensors.size());
    for (const auto& [name, t] : tensors) {
        check(t.defined(), "cannot save undefined tensor ", name);
        append_u64(buf, name.size());
        buf += name;
        append_u64(buf, t.shape().size());
        for (int64_t d : t.shape()) append_i64(buf, d);
        append_f64(buf, t.data(), t.numel());
    }
    append_u64(buf, fnv1a64(buf.data(), buf.size()));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        check(out.good(), "cannot write checkpoint ", tmp);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        check(out.good(), "failed writing checkpoint ", tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    check(!ec, "cannot move checkpoint into place at ", path, ": ", ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    check(buf.size() >= 8 + 8, "checkpoint ", path, " is too small to be valid");
    check(std::memcmp(buf.data(), kMagic, 8) == 0, path, " is not a checkpoint container");

    uint64_t stored_hash;
    std::memcpy(&stored_hash, buf.data() + buf.size() - 8, 8);
    const uint64_t actual = fnv1a64(buf.data(), buf.size() - 8);
    check(actual == stored_hash, "checkpoint ", path, " is corrupt (content hash mismatch)");

    Reader r{buf, 8};
    Checkpoint ckpt;
    ckpt.content_hash = stored_hash;
    ckpt.meta = parse_kv_text(r.bytes(r.u64()));
    const uint64_t count = r.u64();
    for (uint64_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u64());
        const uint64_t ndim = r.u64();
        check(ndim <= 8, "tensor ", name, " has implausible rank ", ndim);
        Shape shape;
        int64_t numel = 1;
        for (uint64_t d = 0; d < ndim; ++d) {
            const int64_t dim = r.i64();
            check(dim > 0, "tensor ", name, " has non-positive dimension ", dim);
            shape.push_back(dim);
            numel *= dim;
        }
        std::vector<double> data = r.doubles(static_cast<uint64_t>(numel));
        ckpt.tensors.emplace_back(std::move(name), Tensor::from_vector(shape, std::move(data)));
    }
    check(r.pos == buf.size() - 8, "checkpoint ", path, " has ", buf.size() - 8 - r.pos,
          " unexpected trailing bytes");
    return ckpt;
}

uint64_t checkpoint_hash(const std::string& path) {
    const std::string buf = read_file(path);
    check(buf.size() >= 16 && std::memcmp(buf.data(), kMagic, 8) == 0, path,
          " is not a checkpoint container");
    uint64_t stored_hash;
    std::memcpy(&stored_hash, buf.data() + buf.size() - 8, 8);
    check(fnv1a64(buf.data(), buf.size() - 8) == stored_hash, "checkpoint ", path,
          " is corrupt (content hash mismatch)");
    return stored_hash;
}

void save_module(const std::string& path, const Module& m, const KVMap& meta) {
    save_checkpoint(path, meta, m.named_state());
}

void load_module(const std::string& path, Module& m) {
    Checkpoint ckpt = load_checkpoint(path);
    auto state = m.named_state();
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : state) by_name.emplace(name, t);
    check(by_name.size() == state.size(), "model has duplicate tensor names");

    for (const auto& [name, stored] : ckpt.tensors) {
        auto it = by_name.find(name);
        check(it != by_name.end(), "checkpoint tensor ", name,
              " does not exist in the model (or appears twice)");
        Tensor dst = it->second;
        check(stored.shape() == dst.shape(), "checkpoint tensor ", name,
              " has a different shape than the model");
        std::memcpy(dst.data(), stored.data(), static_cast<size_t>(dst.numel()) * sizeof(double));
        by_name.erase(it);
    }
    check(by_name.empty(), "model tensor ", by_name.empty() ? "" : by_name.begin()->first,
          " is missing from the checkpoint");
}

}  // namespace dpiqa
