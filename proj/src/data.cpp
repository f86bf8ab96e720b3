#include "multimix/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "multimix/errors.hpp"
#include "multimix/image_io.hpp"
#include "multimix/rng.hpp"

namespace multimix {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

template <class T>
void shuffle_with(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(v[i - 1], v[std::min(j, i - 1)]);
    }
}

}  // namespace

std::vector<SampleDescriptor> parse_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open manifest '" + path.string() + "'");
    const auto base = path.parent_path();
    std::vector<SampleDescriptor> out;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
        if (!header_seen) {
            if (line != kManifestHeader)
                throw ParseError(std::string("expected header '") + kManifestHeader + "', got '" + line + "'", lineno);
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 4) throw ParseError("expected 4 fields, got " + std::to_string(f.size()), lineno);
        if (f[0].empty()) throw ParseError("empty id", lineno);
        if (f[1].empty()) throw ParseError("empty image_path", lineno);
        SampleDescriptor d;
        d.id = f[0];
        d.image_path = base / f[1];
        d.line = lineno;
        if (!f[2].empty()) {
            if (f[2] == "0") d.class_label = 0;
            else if (f[2] == "1") d.class_label = 1;
            else throw ParseError("class_label must be empty, 0 or 1, got '" + f[2] + "'", lineno);
        }
        if (!f[3].empty()) d.mask_path = base / f[3];
        out.push_back(std::move(d));
    }
    if (!header_seen) throw ParseError(std::string("missing header '") + kManifestHeader + "'", lineno + 1);
    return out;
}

Sample load_and_standardize(const SampleDescriptor& d, int height, int width) {
    Sample s;
    s.id = d.id;
    s.class_label = d.class_label;
    try {
        s.image = resize_bilinear(read_gray(d.image_path).pixels, height, width);
        clamp01(s.image);
        if (d.mask_path) {
            Tensor m = resize_nearest(read_gray(*d.mask_path).pixels, height, width);
            for (double& v : m.data) v = v >= 0.5 ? 1.0 : 0.0;
            s.mask = std::move(m);
        }
    } catch (const LoadError& e) {
        throw LoadError("sample '" + d.id + "': " + e.what());
    }
    return s;
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest, int height, int width) {
    std::vector<Sample> out;
    for (const auto& d : parse_manifest(manifest)) out.push_back(load_and_standardize(d, height, width));
    return out;
}

Splits split_labeled(const std::vector<Sample>& samples, const SplitSpec& spec) {
    std::vector<std::size_t> class_pool, seg_pool, neither;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.class_label) class_pool.push_back(i);
        if (s.mask) seg_pool.push_back(i);
        if (!s.class_label && !s.mask) neither.push_back(i);
    }
    const std::size_t n_class = spec.n_class_labeled.value_or(class_pool.size());
    const std::size_t n_seg = spec.n_seg_labeled.value_or(seg_pool.size());
    if (n_class > class_pool.size())
        throw ConfigError("n_class_labeled=" + std::to_string(n_class) + " exceeds the " +
                          std::to_string(class_pool.size()) + " class-labeled samples available");
    if (n_seg > seg_pool.size())
        throw ConfigError("n_seg_labeled=" + std::to_string(n_seg) + " exceeds the " +
                          std::to_string(seg_pool.size()) + " mask-bearing samples available");

    auto rng = make_rng({spec.split_seed, static_cast<std::uint64_t>(RngStream::split)});
    Splits out;

    // Stratified class selection: largest-remainder allocation per class.
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i : class_pool) by_class[*samples[i].class_label].push_back(i);
    for (auto& [label, members] : by_class) shuffle_with(members, rng);
    std::map<int, std::size_t> take;
    std::vector<std::pair<double, int>> remainders;
    std::size_t assigned = 0;
    for (const auto& [label, members] : by_class) {
        const double exact = static_cast<double>(n_class) * members.size() / static_cast<double>(class_pool.size());
        take[label] = static_cast<std::size_t>(std::floor(exact));
        assigned += take[label];
        remainders.emplace_back(-(exact - std::floor(exact)), label);
    }
    std::sort(remainders.begin(), remainders.end());
    for (std::size_t r = 0; assigned < n_class; r = (r + 1) % remainders.size()) {
        const int label = remainders[r].second;
        if (take[label] < by_class[label].size()) {
            ++take[label];
            ++assigned;
        }
    }
    for (const auto& [label, members] : by_class) {
        out.class_labeled.insert(out.class_labeled.end(), members.begin(), members.begin() + take[label]);
        out.class_unlabeled.insert(out.class_unlabeled.end(), members.begin() + take[label], members.end());
    }
    std::sort(out.class_labeled.begin(), out.class_labeled.end());
    out.class_unlabeled.insert(out.class_unlabeled.end(), neither.begin(), neither.end());
    std::sort(out.class_unlabeled.begin(), out.class_unlabeled.end());

    shuffle_with(seg_pool, rng);
    out.seg_labeled.assign(seg_pool.begin(), seg_pool.begin() + n_seg);
    out.seg_unlabeled.assign(seg_pool.begin() + n_seg, seg_pool.end());
    out.seg_unlabeled.insert(out.seg_unlabeled.end(), neither.begin(), neither.end());
    std::sort(out.seg_labeled.begin(), out.seg_labeled.end());
    std::sort(out.seg_unlabeled.begin(), out.seg_unlabeled.end());
    return out;
}

BatchComposer::BatchComposer(const std::vector<Sample>& samples, const Splits& splits, int batch_size,
                             std::uint64_t seed, int epoch, AugPolicy policy, StreamMask mask)
    : samples_(samples), splits_(splits), batch_size_(batch_size), seed_(seed), epoch_(epoch),
      policy_(std::move(policy)), mask_(mask) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    const std::vector<std::size_t>* pools[] = {&splits_.class_labeled, &splits_.class_unlabeled, &splits_.seg_labeled,
                                               &splits_.seg_unlabeled};
    for (const auto* p : pools) largest_ = std::max(largest_, p->size());
    steps_ = (largest_ + batch_size - 1) / batch_size;
    for (std::uint64_t id = 0; id < 4; ++id) {
        std::vector<std::size_t> perm(pools[id]->size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        auto rng = make_rng({seed_, static_cast<std::uint64_t>(epoch_), id, static_cast<std::uint64_t>(RngStream::compose)});
        shuffle_with(perm, rng);
        perms_.push_back(std::move(perm));
    }
}

std::vector<std::size_t> BatchComposer::draw(const std::vector<std::size_t>& pool, const std::vector<std::size_t>& perm,
                                             bool traverse, std::size_t step, std::uint64_t pool_id) const {
    std::vector<std::size_t> out;
    if (pool.empty()) return out;
    if (traverse) {
        for (int j = 0; j < batch_size_; ++j) out.push_back(pool[perm[(step * batch_size_ + j) % pool.size()]]);
    } else {
        auto rng = make_rng({seed_, static_cast<std::uint64_t>(epoch_), pool_id, step,
                             static_cast<std::uint64_t>(RngStream::compose)});
        for (int j = 0; j < batch_size_; ++j) {
            const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size()));
            out.push_back(pool[std::min(k, pool.size() - 1)]);
        }
    }
    return out;
}

BatchBundle BatchComposer::bundle(std::size_t step) const {
    BatchBundle b;
    const std::uint64_t ep = static_cast<std::uint64_t>(epoch_);
    auto key = [&](std::size_t j, std::size_t sample) {
        return AugKey{seed_, ep, (static_cast<std::uint64_t>(step) * batch_size_ + j) * 1000003ULL + sample};
    };
    auto pick = [&](const std::vector<std::size_t>& pool, std::uint64_t id) {
        return draw(pool, perms_[id], pool.size() == largest_, step, id);
    };
    if (mask_.class_labeled) {
        b.class_labeled_ids = pick(splits_.class_labeled, 0);
        for (std::size_t j = 0; j < b.class_labeled_ids.size(); ++j) {
            const auto& s = samples_[b.class_labeled_ids[j]];
            b.class_labeled.push_back(weak_augment(s.image, key(j, b.class_labeled_ids[j]), policy_.weak));
            b.class_labels.push_back(*s.class_label);
        }
    }
    if (mask_.class_unlabeled) {
        b.class_unlabeled_ids = pick(splits_.class_unlabeled, 1);
        for (std::size_t j = 0; j < b.class_unlabeled_ids.size(); ++j) {
            const auto& s = samples_[b.class_unlabeled_ids[j]];
            const AugKey k = key(j, b.class_unlabeled_ids[j]);
            b.class_unlabeled_weak.push_back(weak_augment(s.image, k, policy_.weak));
            b.class_unlabeled_strong.push_back(strong_augment(s.image, k, policy_));
        }
    }
    if (mask_.seg_labeled) {
        b.seg_labeled_ids = pick(splits_.seg_labeled, 2);
        for (std::size_t j = 0; j < b.seg_labeled_ids.size(); ++j) {
            const auto& s = samples_[b.seg_labeled_ids[j]];
            auto [img, m] = weak_augment_pair(s.image, *s.mask, key(j, b.seg_labeled_ids[j]), policy_.weak);
            b.seg_labeled.push_back(std::move(img));
            b.seg_masks.push_back(std::move(m));
        }
    }
    if (mask_.seg_unlabeled) {
        b.seg_unlabeled_ids = pick(splits_.seg_unlabeled, 3);
        for (std::size_t id : b.seg_unlabeled_ids) b.seg_unlabeled.push_back(samples_[id].image);
    }
    return b;
}

}  // namespace multimix
