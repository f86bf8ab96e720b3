#include "multimix/params.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include <openssl/evp.h>

#include "multimix/errors.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::encoder: return "encoder";
        case ParamGroup::classifier: return "classifier";
        case ParamGroup::bridge: return "bridge";
        case ParamGroup::decoder: return "decoder";
    }
    return "unknown";
}

ParamArray& ParameterSet::add(std::string name, ParamGroup group, std::vector<int> shape) {
    if (index_.count(name)) throw InputError("duplicate parameter name '" + name + "'");
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
    index_.emplace(name, arrays_.size());
    arrays_.push_back(ParamArray{std::move(name), group, std::move(shape), AlignedVector(n, 0.0)});
    return arrays_.back();
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter '" + name + "'");
    return it->second;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out;
    for (const auto& a : arrays_) out.add(a.name, a.group, a.shape);
    return out;
}

void ParameterSet::set_zero() {
    for (auto& a : arrays_) std::fill(a.values.begin(), a.values.end(), 0.0);
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.values.size();
    return n;
}

bool ParameterSet::all_finite() const {
    for (const auto& a : arrays_)
        if (!multimix::all_finite(std::span<const double>(a.values))) return false;
    return true;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::string ParameterSet::digest() const {
    std::vector<unsigned char> buf;
    auto append = [&buf](const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf.insert(buf.end(), c, c + n);
    };
    for (const auto& a : arrays_) {
        append(a.name.data(), a.name.size());
        buf.push_back(0);
        for (int d : a.shape) append(&d, sizeof d);
        append(a.values.data(), a.values.size() * sizeof(double));
    }
    return sha256_hex(buf);
}

}  // namespace multimix
