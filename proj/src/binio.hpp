#pragma once

// Little-endian binary serialization helpers shared by the epoch cache and
// checkpoint formats.

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace sleepscore::detail {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline void put_i64(std::vector<std::uint8_t>& out, std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
}

inline void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

class BinReader {
   public:
    BinReader(const std::uint8_t* data, std::size_t size, std::string what)
        : data_(data), size_(size), what_(std::move(what)) {}

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)])
                 << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::int64_t i64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)])
                 << (8 * i);
        }
        pos_ += 8;
        return static_cast<std::int64_t>(v);
    }

    double f64() {
        const std::int64_t i = i64();
        double v;
        std::memcpy(&v, &i, 8);
        return v;
    }

    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_) + pos_, n);
        pos_ += n;
        return s;
    }

    void raw(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, data_ + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == size_; }
    std::size_t pos() const { return pos_; }

   private:
    void need(std::size_t n) {
        if (pos_ + n > size_) {
            throw std::runtime_error(what_ + ": truncated at byte " + std::to_string(pos_));
        }
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

}  // namespace sleepscore::detail
