#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clr/rng.hpp"
#include "clr/tensor.hpp"

namespace clr {

struct MemorySlot {
    std::vector<float> image;
    int label = 0;
    std::size_t source_task = 0;
    std::uint64_t item_id = 0; // arrival counter within its class, for sampling diagnostics
};

/// Items drawn from the buffer, packed for concatenation with a training batch.
struct MemoryBatch {
    std::vector<float> pixels;
    std::vector<int> labels;
    std::size_t size() const { return labels.size(); }
};

// Class-balanced reservoir. The capacity is split as evenly as possible over
// the classes seen so far (earlier classes take the remainder). Each class keeps
// a uniform reservoir sample of everything observed for it, holding exactly
// min(observed, quota) slots. When a new class appears, over-quota classes
// shed slots uniformly at random.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::size_t image_numel, std::uint64_t seed);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const;
    bool empty() const { return size() == 0; }
    std::size_t image_numel() const { return image_numel_; }

    /// Classes in order of first appearance.
    const std::vector<int>& classes() const { return order_; }
    std::size_t quota(int label) const;
    std::size_t count(int label) const;
    std::uint64_t observed(int label) const;
    const std::vector<MemorySlot>& slots(int label) const;

    /// Observes every sample of a batch ([n, C, H, W] pixels) in order.
    void update(std::span<const float> pixels, std::span<const int> labels, std::size_t source_task);

    /// Uniform sample without replacement of min(eligible, n) stored items whose
    /// source task precedes `before_task`; empty (and no draws) when none are eligible.
    MemoryBatch retrieve(std::size_t n, Rng& rng, std::size_t before_task = kAllTasks) const;
    static constexpr std::size_t kAllTasks = static_cast<std::size_t>(-1);

private:
    struct ClassState {
        int label = 0;
        std::uint64_t observed = 0;
        std::vector<MemorySlot> slots;
    };
    ClassState* find(int label);
    const ClassState* find(int label) const;
    std::size_t quota_at(std::size_t position) const;
    void rebalance();

    std::size_t capacity_;
    std::size_t image_numel_;
    Rng rng_;
    std::vector<int> order_;
    std::vector<ClassState> classes_; // parallel to order_
};

void memory_update(ReplayBuffer& buffer, std::span<const float> pixels, std::span<const int> labels,
                   std::size_t source_task);
MemoryBatch memory_retrieve(const ReplayBuffer& buffer, std::size_t current_batch_size, Rng& rng,
                            std::size_t before_task = ReplayBuffer::kAllTasks);

} // namespace clr
