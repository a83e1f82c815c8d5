#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mumu/common.hpp"

namespace mumu {
namespace npy {

/// n-d double tensor with explicit shape; storage is C order.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    size_t count() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
};

// NPY format v1.0, little-endian; dtypes <f8, <f4 and |u1 are accepted.
inline Tensor read(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("npy: cannot read " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw IoError("npy: bad magic in " + path);
    char ver[2];
    f.read(ver, 2);
    uint16_t hlen = 0;
    f.read(reinterpret_cast<char *>(&hlen), 2);
    std::string header(hlen, '\0');
    f.read(header.data(), hlen);
    if (!f) throw IoError("npy: truncated header");

    auto find_value = [&](const std::string &key) -> std::string {
        auto pos = header.find("'" + key + "'");
        if (pos == std::string::npos) throw IoError("npy: header missing " + key);
        pos = header.find(':', pos);
        return header.substr(pos + 1);
    };

    std::string descr = find_value("descr");
    auto q0 = descr.find('\'');
    auto q1 = descr.find('\'', q0 + 1);
    descr = descr.substr(q0 + 1, q1 - q0 - 1);

    if (find_value("fortran_order").find("True") != std::string::npos)
        throw IoError("npy: fortran order unsupported");

    std::string shape_str = find_value("shape");
    auto p0 = shape_str.find('(');
    auto p1 = shape_str.find(')');
    Tensor t;
    {
        std::istringstream ss(shape_str.substr(p0 + 1, p1 - p0 - 1));
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            bool digit = false;
            for (char c : tok)
                if (c >= '0' && c <= '9') digit = true;
            if (digit) t.shape.push_back(std::stoi(tok));
        }
    }
    size_t n = t.count();
    t.data.resize(n);
    if (descr == "<f8") {
        f.read(reinterpret_cast<char *>(t.data.data()), static_cast<std::streamsize>(n * 8));
    } else if (descr == "<f4") {
        std::vector<float> raw(n);
        f.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(n * 4));
        for (size_t i = 0; i < n; ++i) t.data[i] = raw[i];
    } else if (descr == "|u1") {
        std::vector<uint8_t> raw(n);
        f.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(n));
        for (size_t i = 0; i < n; ++i) t.data[i] = raw[i] / 255.0;
    } else {
        throw IoError("npy: unsupported dtype " + descr);
    }
    if (!f) throw IoError("npy: truncated payload in " + path);
    return t;
}

inline void write(const std::string &path, const Tensor &t) {
    std::ostringstream shape;
    shape << "(";
    for (size_t i = 0; i < t.shape.size(); ++i) shape << t.shape[i] << ", ";
    shape << ")";
    std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape.str() + ", }";
    size_t total = 10 + header.size() + 1;
    size_t pad = (64 - total % 64) % 64;
    header += std::string(pad, ' ');
    header += '\n';

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("npy: cannot write " + path);
    f.write("\x93NUMPY\x01\x00", 8);
    uint16_t hlen = static_cast<uint16_t>(header.size());
    f.write(reinterpret_cast<const char *>(&hlen), 2);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(reinterpret_cast<const char *>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * 8));
    if (!f) throw IoError("npy: write failed for " + path);
}

} // namespace npy
} // namespace mumu
