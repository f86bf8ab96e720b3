#include "multimix/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "multimix/errors.hpp"
#include "multimix/model.hpp"

namespace multimix {

namespace {

constexpr std::array<char, 8> kMagic = {'M', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    template <class T>
    void pod(const T& v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void values(std::span<const double> v, DType dtype) {
        for (double x : v) {
            if (dtype == DType::f64) pod(x);
            else pod(static_cast<float>(x));
        }
    }
    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(std::vector<char> bytes, std::string source) : buf_(std::move(bytes)), source_(std::move(source)) {}

    template <class T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    AlignedVector values(std::size_t n, DType dtype) {
        AlignedVector out(n);
        for (auto& x : out) x = dtype == DType::f64 ? pod<double>() : static_cast<double>(pod<float>());
        return out;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw LoadError("checkpoint '" + source_ + "' is truncated");
    }

    std::vector<char> buf_;
    std::string source_;
    std::size_t pos_ = 0;
};

std::vector<char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Writer w;
    for (char c : kMagic) w.pod(c);
    w.pod(kCheckpointVersion);
    w.pod(static_cast<std::uint8_t>(ckpt.dtype));
    w.pod(ckpt.step);
    w.pod(ckpt.epoch);
    w.pod(ckpt.seed);
    w.str(to_json_string(ckpt.model));
    w.str(ckpt.metadata);
    const auto& arrays = ckpt.params.arrays();
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        w.str(a.name);
        w.pod(static_cast<std::uint8_t>(a.group));
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
        for (int d : a.shape) w.pod<std::int32_t>(d);
        w.values(a.values, ckpt.dtype);
    }
    w.pod<std::uint8_t>(ckpt.optimizer ? 1 : 0);
    if (ckpt.optimizer) {
        w.pod(ckpt.optimizer->t);
        for (const auto& a : ckpt.optimizer->m.arrays()) w.values(a.values, DType::f64);
        for (const auto& a : ckpt.optimizer->v.arrays()) w.values(a.values, DType::f64);
    }

    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        out.flush();
        if (!out) throw IoError("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Reader r(read_all(path), path.string());
    for (char c : kMagic)
        if (r.pod<char>() != c) throw LoadError("'" + path.string() + "' is not a checkpoint");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint format version " + std::to_string(version) + ", expected " +
                           std::to_string(kCheckpointVersion));
    Checkpoint ck;
    const auto dtype = r.pod<std::uint8_t>();
    if (dtype != 1 && dtype != 2) throw LoadError("unknown checkpoint dtype " + std::to_string(dtype));
    ck.dtype = static_cast<DType>(dtype);
    ck.step = r.pod<std::uint64_t>();
    ck.epoch = r.pod<std::uint64_t>();
    ck.seed = r.pod<std::uint64_t>();
    try {
        ck.model = parse_model_config(r.str());
    } catch (const ConfigError& e) {
        throw VersionError(std::string("checkpoint model config: ") + e.what());
    }
    ck.metadata = r.str();
    const auto n = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto name = r.str();
        const auto group = r.pod<std::uint8_t>();
        if (group > 3) throw LoadError("bad parameter group in '" + path.string() + "'");
        const auto ndim = r.pod<std::uint32_t>();
        if (ndim > 8) throw LoadError("bad parameter rank in '" + path.string() + "'");
        std::vector<int> shape;
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(r.pod<std::int32_t>());
            if (shape.back() < 0) throw LoadError("bad parameter shape in '" + path.string() + "'");
            count *= static_cast<std::size_t>(shape.back());
        }
        auto& a = ck.params.add(std::move(name), static_cast<ParamGroup>(group), shape);
        a.values = r.values(count, ck.dtype);
    }
    if (r.pod<std::uint8_t>()) {
        AdamState st = AdamState::like(ck.params);
        st.t = r.pod<std::uint64_t>();
        for (auto& a : st.m.arrays()) a.values = r.values(a.values.size(), DType::f64);
        for (auto& a : st.v.arrays()) a.values = r.values(a.values.size(), DType::f64);
        ck.optimizer = std::move(st);
    }
    if (!r.done()) throw LoadError("trailing bytes in checkpoint '" + path.string() + "'");
    Network(ck.model).check_params(ck.params);
    return ck;
}

std::string file_digest(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    return sha256_hex({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

}  // namespace multimix
