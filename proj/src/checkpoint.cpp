#include "vlptl/checkpoint.hpp"

#include "vlptl/errors.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>

namespace vlptl {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'P', 'T', 'L', 'C', 'K', '1'};

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) {
        throw CheckpointError("checkpoint truncated");
    }
    return v;
}

std::string read_string(std::istream& is) {
    const auto len = read_u64(is);
    if (len > (1ULL << 32)) {
        throw CheckpointError("checkpoint string length implausible");
    }
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    if (!is) {
        throw CheckpointError("checkpoint truncated");
    }
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw CheckpointError("cannot write checkpoint " + path.string());
    }
    os.write(kMagic, sizeof kMagic);
    const std::string header = ckpt.header.dump();
    write_u64(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_u64(os, ckpt.arrays.size());
    for (const auto& [name, m] : ckpt.arrays) {
        write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(os, static_cast<std::uint64_t>(m.rows()));
        write_u64(os, static_cast<std::uint64_t>(m.cols()));
        os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!os) {
        throw CheckpointError("failed writing checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    char magic[sizeof kMagic] = {};
    is.read(magic, sizeof magic);
    if (!is || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
        throw CheckpointError("not a checkpoint file: " + path.string());
    }
    Checkpoint ckpt;
    try {
        ckpt.header = nlohmann::json::parse(read_string(is));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    const auto count = read_u64(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = read_string(is);
        const auto rows = static_cast<Eigen::Index>(read_u64(is));
        const auto cols = static_cast<Eigen::Index>(read_u64(is));
        ad::Matrix m(rows, cols);
        is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!is) {
            throw CheckpointError("checkpoint truncated in array " + name);
        }
        ckpt.arrays.emplace(std::move(name), std::move(m));
    }
    return ckpt;
}

void store_parameters(const nn::ParameterList& params, Checkpoint& ckpt) {
    for (const auto& p : params) {
        ckpt.arrays[p.name] = p.var.value();
    }
}

void restore_parameters(const Checkpoint& ckpt, const nn::ParameterList& params) {
    for (const auto& p : params) {
        const auto it = ckpt.arrays.find(p.name);
        if (it == ckpt.arrays.end()) {
            throw CheckpointError("checkpoint missing parameter " + p.name);
        }
        if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
            throw CheckpointError("checkpoint shape mismatch for " + p.name);
        }
        ad::Var v = p.var;
        v.mutable_value() = it->second;
    }
}

std::string stable_hash(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace vlptl
