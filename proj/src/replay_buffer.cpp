#include "clr/replay_buffer.hpp"

#include <algorithm>
#include <numeric>

#include "clr/error.hpp"

namespace clr {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t image_numel, std::uint64_t seed)
    : capacity_(capacity), image_numel_(image_numel), rng_(seed) {
    if (image_numel == 0) throw ConfigError("replay buffer: image size must be positive");
}

std::size_t ReplayBuffer::size() const {
    std::size_t n = 0;
    for (const auto& c : classes_) n += c.slots.size();
    return n;
}

ReplayBuffer::ClassState* ReplayBuffer::find(int label) {
    for (auto& c : classes_)
        if (c.label == label) return &c;
    return nullptr;
}

const ReplayBuffer::ClassState* ReplayBuffer::find(int label) const {
    for (const auto& c : classes_)
        if (c.label == label) return &c;
    return nullptr;
}

std::size_t ReplayBuffer::quota_at(std::size_t position) const {
    const std::size_t m = classes_.size();
    return capacity_ / m + (position < capacity_ % m ? 1 : 0);
}

std::size_t ReplayBuffer::quota(int label) const {
    for (std::size_t i = 0; i < classes_.size(); ++i)
        if (classes_[i].label == label) return quota_at(i);
    return 0;
}

std::size_t ReplayBuffer::count(int label) const {
    const auto* c = find(label);
    return c ? c->slots.size() : 0;
}

std::uint64_t ReplayBuffer::observed(int label) const {
    const auto* c = find(label);
    return c ? c->observed : 0;
}

const std::vector<MemorySlot>& ReplayBuffer::slots(int label) const {
    static const std::vector<MemorySlot> none;
    const auto* c = find(label);
    return c ? c->slots : none;
}

void ReplayBuffer::rebalance() {
    for (std::size_t i = 0; i < classes_.size(); ++i) {
        auto& slots = classes_[i].slots;
        const std::size_t q = quota_at(i);
        while (slots.size() > q) {
            const std::size_t j = rng_.below(slots.size());
            std::swap(slots[j], slots.back());
            slots.pop_back();
        }
    }
}

void ReplayBuffer::update(std::span<const float> pixels, std::span<const int> labels, std::size_t source_task) {
    if (pixels.size() != labels.size() * image_numel_)
        throw InternalError("replay buffer: pixel count does not match labels");
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const int label = labels[n];
        ClassState* cs = find(label);
        if (!cs) {
            order_.push_back(label);
            classes_.push_back(ClassState{label, 0, {}});
            rebalance();
            cs = &classes_.back();
        }
        const std::size_t position = static_cast<std::size_t>(cs - classes_.data());
        const std::size_t q = quota_at(position);
        const std::uint64_t item = cs->observed++;
        auto src = pixels.subspan(n * image_numel_, image_numel_);
        if (cs->slots.size() < q) {
            cs->slots.push_back({std::vector<float>(src.begin(), src.end()), label, source_task, item});
            continue;
        }
        const std::uint64_t j = rng_.below(cs->observed);
        if (j < q) cs->slots[j] = {std::vector<float>(src.begin(), src.end()), label, source_task, item};
    }
}

MemoryBatch ReplayBuffer::retrieve(std::size_t n, Rng& rng, std::size_t before_task) const {
    MemoryBatch out;
    std::vector<const MemorySlot*> pick;
    for (const auto& c : classes_)
        for (const auto& s : c.slots)
            if (before_task == kAllTasks || s.source_task < before_task) pick.push_back(&s);
    const std::size_t total = pick.size();
    const std::size_t k = std::min(total, n);
    if (k == 0) return out;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.below(total - i);
        std::swap(pick[i], pick[j]);
    }
    out.pixels.reserve(k * image_numel_);
    out.labels.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.pixels.insert(out.pixels.end(), pick[i]->image.begin(), pick[i]->image.end());
        out.labels.push_back(pick[i]->label);
    }
    return out;
}

void memory_update(ReplayBuffer& buffer, std::span<const float> pixels, std::span<const int> labels,
                   std::size_t source_task) {
    buffer.update(pixels, labels, source_task);
}

MemoryBatch memory_retrieve(const ReplayBuffer& buffer, std::size_t current_batch_size, Rng& rng,
                            std::size_t before_task) {
    return buffer.retrieve(current_batch_size, rng, before_task);
}

} // namespace clr
