#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "multimix/tensor.hpp"

namespace multimix {

enum class ParamGroup : std::uint8_t { encoder = 0, classifier = 1, bridge = 2, decoder = 3 };

const char* group_name(ParamGroup g);

struct ParamArray {
    std::string name;
    ParamGroup group = ParamGroup::encoder;
    std::vector<int> shape;
    AlignedVector values;

    bool operator==(const ParamArray&) const = default;
};

// Ordered collection of uniquely named parameter arrays. Order is the
// insertion order and is part of the checkpoint format.
class ParameterSet {
public:
    ParamArray& add(std::string name, ParamGroup group, std::vector<int> shape);

    std::size_t size() const { return arrays_.size(); }
    const std::vector<ParamArray>& arrays() const { return arrays_; }
    std::vector<ParamArray>& arrays() { return arrays_; }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const;
    ParamArray& get(const std::string& name) { return arrays_[index_of(name)]; }
    const ParamArray& get(const std::string& name) const { return arrays_[index_of(name)]; }
    std::span<double> values(const std::string& name) { return get(name).values; }
    std::span<const double> values(const std::string& name) const { return get(name).values; }

    // Same names and shapes, every value zero.
    ParameterSet zeros_like() const;
    void set_zero();

    std::size_t scalar_count() const;
    bool all_finite() const;
    // SHA-256 over names, shapes and raw value bytes, hex encoded.
    std::string digest() const;

    bool operator==(const ParameterSet& o) const { return arrays_ == o.arrays_; }

private:
    std::vector<ParamArray> arrays_;
    std::unordered_map<std::string, std::size_t> index_;
};

std::string sha256_hex(std::span<const unsigned char> bytes);

}  // namespace multimix
