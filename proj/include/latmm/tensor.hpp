#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace latmm {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major float32 tensor. The one value type every layer trades in.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), 0.0f) {
        for (int64_t e : shape)
            if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
    }
    Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data size " +
                                        std::to_string(data.size()));
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t ndim() const { return shape.size(); }

    float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_finite(const char* where) const {
        if (!all_finite()) throw std::runtime_error(std::string("non-finite value after ") + where);
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline Tensor full(Shape s, float v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

inline Tensor zeros(Shape s) { return Tensor(std::move(s)); }

inline Tensor ones(Shape s) { return full(std::move(s), 1.0f); }

// ---- .ten file format ----
// magic "TENS", version 0x01, dtype 0x01 (f32), ndim byte, ndim u64 LE extents,
// row-major f32 LE payload. Round trips bit-exactly.

inline void save_ten(const Tensor& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write("TENS", 4);
    const uint8_t version = 0x01, dtype = 0x01;
    const uint8_t ndim = static_cast<uint8_t>(t.shape.size());
    f.put(static_cast<char>(version));
    f.put(static_cast<char>(dtype));
    f.put(static_cast<char>(ndim));
    for (int64_t e : t.shape) {
        uint64_t u = static_cast<uint64_t>(e);
        f.write(reinterpret_cast<const char*>(&u), 8);
    }
    f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline Tensor load_ten(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "TENS", 4) != 0) throw std::runtime_error("bad magic in " + path);
    int version = f.get(), dtype = f.get(), ndim = f.get();
    if (version != 0x01) throw std::runtime_error("unsupported .ten version in " + path);
    if (dtype != 0x01) throw std::runtime_error("unsupported .ten dtype in " + path);
    if (ndim < 0 || ndim > 8) throw std::runtime_error("bad ndim in " + path);
    Shape shape(static_cast<size_t>(ndim));
    for (auto& e : shape) {
        uint64_t u = 0;
        f.read(reinterpret_cast<char*>(&u), 8);
        e = static_cast<int64_t>(u);
        if (e <= 0) throw std::runtime_error("bad extent in " + path);
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    if (!f) throw std::runtime_error("truncated payload in " + path);
    return t;
}

}  // namespace latmm
