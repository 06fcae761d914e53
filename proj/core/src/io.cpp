#include "amsf/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace amsf::io {

void write_pgm(const std::filesystem::path& file, const Matrix& image) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write image: " + file.string());
    const long h = image.rows(), w = image.cols();
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(w);
    for (long i = 0; i < h; ++i) {
        for (long j = 0; j < w; ++j) {
            const double v = std::min(1.0, std::max(0.0, image(i, j)));
            row[j] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!out) throw DataError("short write: " + file.string());
}

Matrix read_pgm(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot read image: " + file.string());
    std::string magic;
    in >> magic;
    if (magic != "P5") throw DataError("not a binary PGM: " + file.string());
    auto next_token = [&in, &file]() {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        throw DataError("truncated PGM header: " + file.string());
    };
    const long w = std::stol(next_token());
    const long h = std::stol(next_token());
    const long maxval = std::stol(next_token());
    if (w <= 0 || h <= 0 || maxval != 255) throw DataError("unsupported PGM: " + file.string());
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw DataError("truncated PGM data: " + file.string());
    }
    Matrix img(h, w);
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) img(i, j) = buf[i * w + j] / 255.0;
    return img;
}

namespace {

constexpr char kMagic[8] = {'A', 'M', 'S', 'F', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const ParamStore& store,
                     const std::string& config_fingerprint) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + file.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod(out, static_cast<uint32_t>(config_fingerprint.size()));
    out.write(config_fingerprint.data(), static_cast<std::streamsize>(config_fingerprint.size()));
    write_pod(out, static_cast<uint64_t>(store.count()));
    for (const auto& p : store) {
        write_pod(out, static_cast<uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(out, static_cast<uint64_t>(p.value.rows()));
        write_pod(out, static_cast<uint64_t>(p.value.cols()));
        for (long i = 0; i < p.value.rows(); ++i)
            for (long j = 0; j < p.value.cols(); ++j) write_pod(out, p.value(i, j));
    }
    if (!out) throw DataError("short checkpoint write: " + file.string());
}

std::string load_checkpoint(const std::filesystem::path& file, ParamStore& store) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + file.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not a checkpoint file: " + file.string());
    }
    const auto version = read_pod<uint32_t>(in);
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto fp_len = read_pod<uint32_t>(in);
    std::string fp(fp_len, '\0');
    in.read(fp.data(), fp_len);
    const auto count = read_pod<uint64_t>(in);
    if (count != store.count()) {
        throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                        std::to_string(store.count()));
    }
    for (uint64_t k = 0; k < count; ++k) {
        const auto name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = read_pod<uint64_t>(in);
        const auto cols = read_pod<uint64_t>(in);
        Parameter* p = store.find(name);
        if (!p) throw DataError("checkpoint parameter not in model: " + name);
        if (static_cast<uint64_t>(p->value.rows()) != rows ||
            static_cast<uint64_t>(p->value.cols()) != cols) {
            throw DataError("checkpoint shape mismatch for " + name);
        }
        for (uint64_t i = 0; i < rows; ++i)
            for (uint64_t j = 0; j < cols; ++j) p->value(i, j) = read_pod<double>(in);
    }
    if (!in) throw DataError("truncated checkpoint: " + file.string());
    return fp;
}

std::string fingerprint(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace amsf::io
