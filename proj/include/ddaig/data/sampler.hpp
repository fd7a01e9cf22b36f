#ifndef DDAIG_DATA_SAMPLER_HPP
#define DDAIG_DATA_SAMPLER_HPP

#include <string>
#include <vector>

#include "json.hpp"

#include "ddaig/data/dataset.hpp"
#include "ddaig/rng.hpp"

namespace ddaig {

/// Seeded minibatch sampler over one split.
///
/// Unbalanced: draws without replacement from a shuffled epoch permutation; when fewer than
/// batch_size items remain, the remainder is dropped and a new permutation starts.
/// Balanced: draws batch_size / D items from a per-domain permutation of each domain.
class BatchSampler {
public:
    BatchSampler(const std::vector<LabeledImage>& items, std::size_t num_domains, std::uint64_t seed, bool balanced)
        : balanced_(balanced), rng_(seed) {
        if (items.empty()) throw Error("sampler: split is empty");
        if (balanced_) {
            pools_.assign(num_domains, {});
            for (std::size_t i = 0; i < items.size(); ++i)
                pools_.at(static_cast<std::size_t>(items[i].domain_label)).push_back(i);
            for (const auto& p : pools_)
                if (p.empty()) throw Error("sampler: balanced sampling needs every domain to have items");
        } else {
            pools_.assign(1, {});
            for (std::size_t i = 0; i < items.size(); ++i) pools_[0].push_back(i);
        }
        perms_.assign(pools_.size(), {});
        cursors_.assign(pools_.size(), 0);
    }

    std::vector<std::size_t> next(std::size_t batch_size) {
        if (batch_size == 0) throw Error("sampler: batch_size must be positive");
        std::vector<std::size_t> out;
        out.reserve(batch_size);
        if (!balanced_) {
            if (batch_size > pools_[0].size()) {
                throw Error("sampler: batch_size " + std::to_string(batch_size) + " exceeds split size " +
                            std::to_string(pools_[0].size()));
            }
            draw(0, batch_size, out);
            return out;
        }
        const std::size_t d = pools_.size();
        if (batch_size % d != 0) {
            throw Error("sampler: balanced batch_size " + std::to_string(batch_size) + " is not divisible by " +
                        std::to_string(d) + " domains");
        }
        const std::size_t per = batch_size / d;
        for (std::size_t k = 0; k < d; ++k) {
            if (per > pools_[k].size()) throw Error("sampler: per-domain batch exceeds domain size");
            draw(k, per, out);
        }
        return out;
    }

    json state() const {
        return {{"rng", rng_state(rng_)}, {"perms", perms_}, {"cursors", cursors_}};
    }

    void restore(const json& s) {
        rng_ = rng_from_state(s.at("rng").get<std::string>());
        perms_ = s.at("perms").get<std::vector<std::vector<std::size_t>>>();
        cursors_ = s.at("cursors").get<std::vector<std::size_t>>();
        if (perms_.size() != pools_.size() || cursors_.size() != pools_.size()) {
            throw Error("sampler state does not match the split layout");
        }
    }

private:
    void draw(std::size_t pool, std::size_t count, std::vector<std::size_t>& out) {
        auto& perm = perms_[pool];
        auto& cur = cursors_[pool];
        if (perm.empty() || cur + count > perm.size()) {
            perm = pools_[pool];
            shuffle(perm.begin(), perm.end(), rng_);
            cur = 0;
        }
        out.insert(out.end(), perm.begin() + static_cast<long>(cur), perm.begin() + static_cast<long>(cur + count));
        cur += count;
    }

    bool balanced_;
    Rng rng_;
    std::vector<std::vector<std::size_t>> pools_;
    std::vector<std::vector<std::size_t>> perms_;
    std::vector<std::size_t> cursors_;
};

/// Draws the next minibatch of items of `split` from the sampler.
inline std::vector<LabeledImage> sample_minibatch(const MultiDomainDataset& ds, const std::string& split,
                                                  std::size_t batch_size, BatchSampler& sampler) {
    const auto& items = ds.split(split);
    std::vector<LabeledImage> out;
    for (auto i : sampler.next(batch_size)) out.push_back(items[i]);
    return out;
}

}  // namespace ddaig

#endif
