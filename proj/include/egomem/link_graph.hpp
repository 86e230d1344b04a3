#pragma once

#include <functional>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "egomem/memory.hpp"

namespace egomem {

/// Undirected link in canonical form (lo < hi).
struct MemoryLink {
    MemoryId lo = 0;
    MemoryId hi = 0;

    static MemoryLink canonical(MemoryId a, MemoryId b) noexcept {
        return a < b ? MemoryLink{a, b} : MemoryLink{b, a};
    }

    auto operator<=>(const MemoryLink&) const = default;
    bool operator==(const MemoryLink&) const = default;
};

/// Decides whether two memories are related. Called with the earlier-id
/// memory first within a session and (old, new) across sessions.
using PairClassifier = std::function<bool(const MemoryEntry& first, const MemoryEntry& second)>;

/// "Related or updated" graph over memory ids.
class LinkGraph {
public:
    /// Throws Error{SelfLink} if a == b, Error{UnknownMemory} if either id is
    /// absent from `store`. Returns true when the link was new.
    bool add_link(MemoryId a, MemoryId b, const MemoryStore& store);

    bool has_link(MemoryId a, MemoryId b) const;
    std::set<MemoryId> neighbors(MemoryId id) const;

    /// Largest id in the connected component of `id`. Throws Error{UnknownMemory}.
    MemoryId chain_tail(MemoryId id, const MemoryStore& store) const;

    /// All ids reachable from `id`, including `id` itself.
    std::set<MemoryId> component(MemoryId id) const;

    /// Two-phase linking for memories created in the session that just ended.
    ///
    /// Phase 1 classifies every pair among `new_ids` (lexicographic id order)
    /// and links the related ones. Phase 2 classifies every (old, new) pair,
    /// old ids ascending crossed with new ids ascending; a related pair links
    /// the new memory to the tail of the old memory's chain. Tails are taken
    /// from the graph as it stood before phase 2, so a tail is always an old
    /// memory. The graph is untouched if the classifier throws.
    ///
    /// Returns the links actually added, in decision order.
    std::vector<MemoryLink> connect_new_memories(const MemoryStore& store,
                                                 std::span<const MemoryId> new_ids,
                                                 const PairClassifier& classifier);

    const std::set<MemoryLink>& links() const noexcept { return links_; }
    std::size_t size() const noexcept { return links_.size(); }
    bool empty() const noexcept { return links_.empty(); }

    bool operator==(const LinkGraph& other) const { return links_ == other.links_; }

private:
    void insert_unchecked(MemoryLink link);

    std::set<MemoryLink> links_;
    std::map<MemoryId, std::set<MemoryId>> adjacency_;
};

}  // namespace egomem
