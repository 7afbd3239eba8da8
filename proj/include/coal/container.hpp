// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coal/tensor.hpp"

namespace coal {

// Binary tensor container ("COAL" magic). Layout, all integers u32 LE:
//   magic "COAL" | version | entry count |
//   per entry: name length | name bytes | dtype (0=f32, 1=f64) | rank |
//              dims... | raw little-endian values
// Entries keep insertion order so writes are byte-reproducible.
inline constexpr std::uint32_t kContainerVersion = 1;

struct ContainerEntry {
    std::string name;
    std::uint32_t dtype = 0;
    std::vector<int> dims;
    std::vector<std::uint8_t> raw;

    std::size_t element_count() const;
};

template <typename T>
constexpr std::uint32_t dtype_code();
template <>
constexpr std::uint32_t dtype_code<float>() { return 0; }
template <>
constexpr std::uint32_t dtype_code<double>() { return 1; }

class TensorContainer {
public:
    template <typename T>
    void put(const std::string& name, const Tensor<T>& t);
    void put(ContainerEntry entry);

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const ContainerEntry& get(const std::string& name) const;
    template <typename T>
    Tensor<T> get_tensor(const std::string& name) const;

    // scalar convenience for metadata entries (stored f64)
    void put_value(const std::string& name, double value);
    double get_value(const std::string& name) const;

    std::vector<std::string> keys() const;
    std::size_t size() const { return entries_.size(); }

    void save(const std::string& path) const;
    static TensorContainer load(const std::string& path);

private:
    std::vector<ContainerEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace coal
