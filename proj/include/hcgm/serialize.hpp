#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hcgm/nn.hpp"

namespace hcgm {

// Binary tensor payload: magic, scalar width, entry count, then
// (name, dims, raw values) records in a fixed order. Used for checkpoints
// and pretrained backbone weights; writes are deterministic byte-for-byte.

namespace detail {

constexpr char kPayloadMagic[9] = "HCGMPAY1";

template <typename S>
void write_pod(std::ostream& os, const S& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(S));
}

template <typename S>
S read_pod(std::istream& is, const std::string& what) {
    S v;
    is.read(reinterpret_cast<char*>(&v), sizeof(S));
    if (!is) throw DataError("truncated payload while reading " + what);
    return v;
}

}  // namespace detail

template <typename T>
void save_payload(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor<T>>>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    os.write(detail::kPayloadMagic, 8);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(sizeof(T)));
    detail::write_pod<uint64_t>(os, static_cast<uint64_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
        for (int64_t d : t.shape()) detail::write_pod<int64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
    }
    if (!os) throw DataError("failed writing payload to '" + path.string() + "'");
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> load_payload(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open payload '" + path.string() + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kPayloadMagic, 8) != 0)
        throw DataError("'" + path.string() + "' is not a tensor payload");
    const auto scalar = detail::read_pod<uint32_t>(is, "scalar width");
    if (scalar != sizeof(T))
        throw DataError("payload '" + path.string() + "' has scalar width " +
                        std::to_string(scalar) + ", expected " + std::to_string(sizeof(T)));
    const auto count = detail::read_pod<uint64_t>(is, "entry count");
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.reserve(count);
    for (uint64_t e = 0; e < count; ++e) {
        const auto nlen = detail::read_pod<uint32_t>(is, "name length");
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const auto ndim = detail::read_pod<uint32_t>(is, "rank of " + name);
        Shape shape(ndim);
        for (uint32_t i = 0; i < ndim; ++i)
            shape[i] = detail::read_pod<int64_t>(is, "dims of " + name);
        std::vector<T> data(static_cast<size_t>(shape_numel(shape)));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(sizeof(T) * data.size()));
        if (!is) throw DataError("truncated payload while reading values of " + name);
        out.emplace_back(name, Tensor<T>::from(shape, std::move(data)));
    }
    return out;
}

// Copies payload values into the registry (params then buffers). Any missing,
// unexpected, or shape-mismatched entry aborts with the full list.
template <typename T>
void apply_payload(ParamRegistry<T>& reg,
                   const std::vector<std::pair<std::string, Tensor<T>>>& payload,
                   const std::string& what) {
    std::vector<std::string> problems;
    std::vector<std::pair<std::string, Tensor<T>>> expected;
    for (auto& p : reg.params) expected.push_back(p);
    for (auto& b : reg.buffers) expected.push_back(b);

    for (auto& [name, dst] : expected) {
        const Tensor<T>* src = nullptr;
        for (const auto& [pname, pt] : payload)
            if (pname == name) src = &pt;
        if (!src) {
            problems.push_back("missing: " + name);
            continue;
        }
        if (src->shape() != dst.shape()) {
            problems.push_back("shape mismatch: " + name + " expected " + shape_str(dst.shape()) +
                               " got " + shape_str(src->shape()));
            continue;
        }
        std::memcpy(dst.data(), src->data(), sizeof(T) * static_cast<size_t>(dst.numel()));
    }
    for (const auto& [pname, pt] : payload) {
        bool known = false;
        for (auto& [name, dst] : expected)
            if (name == pname) known = true;
        if (!known) problems.push_back("unexpected: " + pname);
    }
    if (!problems.empty()) {
        std::string msg = what + ": incompatible payload (";
        for (size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
        msg += ")";
        throw DataError(msg);
    }
}

}  // namespace hcgm
