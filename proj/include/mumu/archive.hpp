#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mumu/common.hpp"
#include "mumu/mat.hpp"

namespace mumu {

/// Flat named-tensor archive: string metadata (incl. the training-stage tag)
/// plus name -> shape -> row-major float32 payloads. Little-endian on disk.
struct TensorArchive {
    std::map<std::string, std::string> meta;
    std::vector<std::string> order; // preserves write order
    std::map<std::string, std::pair<std::pair<int, int>, std::vector<float>>> tensors;

    static constexpr char kMagic[9] = "MUMUTNS1";

    void put(const std::string &name, int rows, int cols, const std::vector<float> &data) {
        if (!tensors.count(name)) order.push_back(name);
        tensors[name] = {{rows, cols}, data};
    }

    template <typename T>
    void put(const std::string &name, const Mat<T> &m) {
        std::vector<float> d(m.data.size());
        for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(m.data[i]);
        put(name, m.rows, m.cols, d);
    }

    template <typename T>
    Mat<T> get(const std::string &name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError("archive: missing tensor " + name);
        Mat<T> m(it->second.first.first, it->second.first.second);
        for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<T>(it->second.second[i]);
        return m;
    }

    bool has(const std::string &name) const { return tensors.count(name) > 0; }

    int stage() const {
        auto it = meta.find("stage");
        return it == meta.end() ? 0 : std::stoi(it->second);
    }

    void set_stage(int s) { meta["stage"] = std::to_string(s); }

    void save(const std::string &path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("archive: cannot write " + path);
        f.write(kMagic, 8);
        write_u32(f, static_cast<uint32_t>(meta.size()));
        for (const auto &[k, v] : meta) {
            write_str(f, k);
            write_str(f, v);
        }
        write_u32(f, static_cast<uint32_t>(order.size()));
        for (const auto &name : order) {
            const auto &[shape, data] = tensors.at(name);
            write_str(f, name);
            write_u32(f, static_cast<uint32_t>(shape.first));
            write_u32(f, static_cast<uint32_t>(shape.second));
            f.write(reinterpret_cast<const char *>(data.data()),
                    static_cast<std::streamsize>(data.size() * sizeof(float)));
        }
        if (!f) throw IoError("archive: write failed for " + path);
    }

    static TensorArchive load(const std::string &path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("archive: cannot read " + path);
        char magic[8];
        f.read(magic, 8);
        if (!f || std::memcmp(magic, kMagic, 8) != 0) throw IoError("archive: bad magic in " + path);
        TensorArchive a;
        uint32_t n_meta = read_u32(f);
        for (uint32_t i = 0; i < n_meta; ++i) {
            std::string k = read_str(f);
            std::string v = read_str(f);
            a.meta[k] = v;
        }
        uint32_t n_tensors = read_u32(f);
        for (uint32_t i = 0; i < n_tensors; ++i) {
            std::string name = read_str(f);
            uint32_t rows = read_u32(f);
            uint32_t cols = read_u32(f);
            std::vector<float> data(static_cast<size_t>(rows) * cols);
            f.read(reinterpret_cast<char *>(data.data()),
                   static_cast<std::streamsize>(data.size() * sizeof(float)));
            if (!f) throw IoError("archive: truncated tensor " + name);
            a.put(name, static_cast<int>(rows), static_cast<int>(cols), data);
        }
        return a;
    }

  private:
    static void write_u32(std::ofstream &f, uint32_t v) {
        f.write(reinterpret_cast<const char *>(&v), 4);
    }
    static uint32_t read_u32(std::ifstream &f) {
        uint32_t v = 0;
        f.read(reinterpret_cast<char *>(&v), 4);
        if (!f) throw IoError("archive: truncated header");
        return v;
    }
    static void write_str(std::ofstream &f, const std::string &s) {
        write_u32(f, static_cast<uint32_t>(s.size()));
        f.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::string read_str(std::ifstream &f) {
        uint32_t n = read_u32(f);
        std::string s(n, '\0');
        f.read(s.data(), n);
        if (!f) throw IoError("archive: truncated string");
        return s;
    }
};

} // namespace mumu
