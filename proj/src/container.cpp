// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "coal/common.hpp"

namespace coal {

namespace {

void write_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t read_u32(const std::string& buf, std::size_t& pos) {
    if (pos + 4 > buf.size()) throw IoError("tensor container: truncated file");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(buf[pos + static_cast<std::size_t>(i)]);
    pos += 4;
    return v;
}

template <typename T>
void encode_values(std::vector<std::uint8_t>& raw, const std::vector<T>& values) {
    raw.resize(values.size() * sizeof(T));
    for (std::size_t i = 0; i < values.size(); ++i) {
        if constexpr (sizeof(T) == 4) {
            const auto bits = std::bit_cast<std::uint32_t>(values[i]);
            for (int b = 0; b < 4; ++b) raw[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
        } else {
            const auto bits = std::bit_cast<std::uint64_t>(values[i]);
            for (int b = 0; b < 8; ++b) raw[i * 8 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
    }
}

template <typename T>
std::vector<T> decode_values(const std::vector<std::uint8_t>& raw) {
    std::vector<T> values(raw.size() / sizeof(T));
    for (std::size_t i = 0; i < values.size(); ++i) {
        if constexpr (sizeof(T) == 4) {
            std::uint32_t bits = 0;
            for (int b = 3; b >= 0; --b) bits = (bits << 8) | raw[i * 4 + static_cast<std::size_t>(b)];
            values[i] = std::bit_cast<float>(bits);
        } else {
            std::uint64_t bits = 0;
            for (int b = 7; b >= 0; --b) bits = (bits << 8) | raw[i * 8 + static_cast<std::size_t>(b)];
            values[i] = std::bit_cast<double>(bits);
        }
    }
    return values;
}

}  // namespace

std::size_t ContainerEntry::element_count() const {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
}

template <typename T>
void TensorContainer::put(const std::string& name, const Tensor<T>& t) {
    ContainerEntry e;
    e.name = name;
    e.dtype = dtype_code<T>();
    e.dims = t.shape();
    encode_values(e.raw, t.data());
    put(std::move(e));
}

void TensorContainer::put(ContainerEntry entry) {
    auto it = index_.find(entry.name);
    if (it != index_.end()) {
        entries_[it->second] = std::move(entry);
        return;
    }
    index_[entry.name] = entries_.size();
    entries_.push_back(std::move(entry));
}

const ContainerEntry& TensorContainer::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("tensor container: key not found: " + name);
    return entries_[it->second];
}

template <typename T>
Tensor<T> TensorContainer::get_tensor(const std::string& name) const {
    const ContainerEntry& e = get(name);
    if (e.dtype != dtype_code<T>())
        throw IoError("tensor container: dtype mismatch for key " + name);
    return Tensor<T>(e.dims, decode_values<T>(e.raw));
}

void TensorContainer::put_value(const std::string& name, double value) {
    put(name, Tensor<double>::scalar(value));
}

double TensorContainer::get_value(const std::string& name) const {
    return get_tensor<double>(name).value();
}

std::vector<std::string> TensorContainer::keys() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

void TensorContainer::save(const std::string& path) const {
    std::string buf;
    buf += "COAL";
    write_u32(buf, kContainerVersion);
    write_u32(buf, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        write_u32(buf, static_cast<std::uint32_t>(e.name.size()));
        buf += e.name;
        write_u32(buf, e.dtype);
        write_u32(buf, static_cast<std::uint32_t>(e.dims.size()));
        for (int d : e.dims) write_u32(buf, static_cast<std::uint32_t>(d));
        buf.append(reinterpret_cast<const char*>(e.raw.data()), e.raw.size());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("tensor container: cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("tensor container: write failed: " + path);
}

TensorContainer TensorContainer::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("tensor container: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (buf.size() < 4 || buf.compare(0, 4, "COAL") != 0)
        throw IoError("tensor container: bad magic bytes in " + path);
    pos = 4;
    const std::uint32_t version = read_u32(buf, pos);
    if (version != kContainerVersion)
        throw IoError("tensor container: unsupported format version " + std::to_string(version));
    const std::uint32_t count = read_u32(buf, pos);
    TensorContainer out;
    for (std::uint32_t i = 0; i < count; ++i) {
        ContainerEntry e;
        const std::uint32_t name_len = read_u32(buf, pos);
        if (pos + name_len > buf.size()) throw IoError("tensor container: truncated file");
        e.name.assign(buf, pos, name_len);
        pos += name_len;
        e.dtype = read_u32(buf, pos);
        if (e.dtype > 1) throw IoError("tensor container: unknown dtype code for key " + e.name);
        const std::uint32_t rank = read_u32(buf, pos);
        e.dims.resize(rank);
        for (std::uint32_t r = 0; r < rank; ++r) e.dims[r] = static_cast<int>(read_u32(buf, pos));
        const std::size_t bytes = e.element_count() * (e.dtype == 0 ? 4 : 8);
        if (pos + bytes > buf.size()) throw IoError("tensor container: truncated file");
        e.raw.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                     buf.begin() + static_cast<std::ptrdiff_t>(pos + bytes));
        pos += bytes;
        out.put(std::move(e));
    }
    return out;
}

template void TensorContainer::put<float>(const std::string&, const Tensor<float>&);
template void TensorContainer::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> TensorContainer::get_tensor<float>(const std::string&) const;
template Tensor<double> TensorContainer::get_tensor<double>(const std::string&) const;

}  // namespace coal
