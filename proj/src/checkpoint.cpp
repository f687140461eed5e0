#include "stereo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace stereo {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

class Reader {
public:
    explicit Reader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(bytes_[pos_ + static_cast<size_t>(i)]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("checkpoint truncated");
        }
    }

    const std::vector<uint8_t>& bytes_;
    size_t pos_ = 0;
};

} // namespace

std::vector<uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
    std::vector<uint8_t> out;
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_u32(out, static_cast<uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
    }
    for (const auto& e : entries) {
        if (static_cast<int64_t>(e.values.size()) != shape_numel(e.shape)) {
            throw FormatError("checkpoint entry '" + e.name + "' has inconsistent shape");
        }
        put_u32(out, static_cast<uint32_t>(e.shape.size()));
        for (int64_t d : e.shape) {
            put_u32(out, static_cast<uint32_t>(d));
        }
        for (float v : e.values) {
            put_u32(out, std::bit_cast<uint32_t>(v));
        }
    }
    return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<uint8_t>& bytes) {
    Reader in(bytes);
    uint32_t version = in.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    uint32_t count = in.u32();
    std::vector<CheckpointEntry> entries(count);
    for (auto& e : entries) {
        e.name = in.str(in.u32());
    }
    for (auto& e : entries) {
        uint32_t rank = in.u32();
        if (rank == 0 || rank > 8) {
            throw FormatError("checkpoint entry '" + e.name + "' has invalid rank");
        }
        for (uint32_t i = 0; i < rank; ++i) {
            e.shape.push_back(in.u32());
        }
        int64_t n = shape_numel(e.shape);
        if (n <= 0 || static_cast<uint64_t>(n) * 4 > bytes.size()) {
            throw FormatError("checkpoint entry '" + e.name + "' has invalid extents");
        }
        e.values.resize(static_cast<size_t>(n));
        for (float& v : e.values) {
            v = std::bit_cast<float>(in.u32());
        }
    }
    if (!in.done()) {
        throw FormatError("trailing bytes after checkpoint payload");
    }
    return entries;
}

std::vector<CheckpointEntry> snapshot(const ParameterSet& params) {
    std::vector<CheckpointEntry> out;
    for (const auto& e : params.entries()) {
        CheckpointEntry c;
        c.name = e.name;
        c.shape = e.value.shape();
        auto v = e.value.to_vector();
        c.values.assign(v.begin(), v.end());
        out.push_back(std::move(c));
    }
    return out;
}

void restore(ParameterSet& params, const std::vector<CheckpointEntry>& entries, bool strict) {
    std::unordered_map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : entries) {
        by_name[e.name] = &e;
    }
    if (strict && entries.size() != params.entries().size()) {
        throw FormatError("checkpoint has " + std::to_string(entries.size()) + " entries, model has " +
                          std::to_string(params.entries().size()));
    }
    for (const auto& target : params.entries()) {
        auto it = by_name.find(target.name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint is missing '" + target.name + "'");
        }
        if (it->second->shape != target.value.shape()) {
            throw FormatError("checkpoint entry '" + target.name + "' has shape " +
                              shape_str(it->second->shape) + ", model expects " +
                              shape_str(target.value.shape()));
        }
    }
    for (const auto& target : params.entries()) {
        const auto& src = *by_name.at(target.name);
        Tensor t = target.value;
        for (size_t i = 0; i < src.values.size(); ++i) {
            t.set_flat(static_cast<int64_t>(i), src.values[i]);
        }
    }
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
    auto bytes = encode_checkpoint(entries);
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace stereo
