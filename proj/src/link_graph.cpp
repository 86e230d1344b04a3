#include "egomem/link_graph.hpp"

#include <algorithm>
#include <deque>
#include <exception>

#include "egomem/error.hpp"

namespace egomem {

void LinkGraph::insert_unchecked(MemoryLink link) {
    if (links_.insert(link).second) {
        adjacency_[link.lo].insert(link.hi);
        adjacency_[link.hi].insert(link.lo);
    }
}

bool LinkGraph::add_link(MemoryId a, MemoryId b, const MemoryStore& store) {
    if (a == b) {
        throw Error(ErrorCode::SelfLink, "cannot link memory " + std::to_string(a) + " to itself");
    }
    for (const auto id : {a, b}) {
        if (!store.contains(id)) {
            throw Error(ErrorCode::UnknownMemory, "no memory with id " + std::to_string(id));
        }
    }
    const auto link = MemoryLink::canonical(a, b);
    const bool fresh = !links_.contains(link);
    insert_unchecked(link);
    return fresh;
}

bool LinkGraph::has_link(MemoryId a, MemoryId b) const {
    return a != b && links_.contains(MemoryLink::canonical(a, b));
}

std::set<MemoryId> LinkGraph::neighbors(MemoryId id) const {
    if (auto it = adjacency_.find(id); it != adjacency_.end()) return it->second;
    return {};
}

std::set<MemoryId> LinkGraph::component(MemoryId id) const {
    std::set<MemoryId> seen{id};
    std::deque<MemoryId> frontier{id};
    while (!frontier.empty()) {
        const auto cur = frontier.front();
        frontier.pop_front();
        auto it = adjacency_.find(cur);
        if (it == adjacency_.end()) continue;
        for (const auto next : it->second) {
            if (seen.insert(next).second) frontier.push_back(next);
        }
    }
    return seen;
}

MemoryId LinkGraph::chain_tail(MemoryId id, const MemoryStore& store) const {
    if (!store.contains(id)) {
        throw Error(ErrorCode::UnknownMemory, "no memory with id " + std::to_string(id));
    }
    return *component(id).rbegin();
}

std::vector<MemoryLink> LinkGraph::connect_new_memories(const MemoryStore& store,
                                                        std::span<const MemoryId> new_ids,
                                                        const PairClassifier& classifier) {
    std::vector<MemoryId> fresh(new_ids.begin(), new_ids.end());
    std::sort(fresh.begin(), fresh.end());
    fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());
    for (const auto id : fresh) {
        if (!store.contains(id)) {
            throw Error(ErrorCode::UnknownMemory, "no memory with id " + std::to_string(id));
        }
    }
    std::vector<MemoryId> old;
    for (const auto& e : store.entries()) {
        if (!std::binary_search(fresh.begin(), fresh.end(), e.id)) old.push_back(e.id);
    }

    auto classify = [&](MemoryId a, MemoryId b) {
        try {
            return classifier(store.get_memory(a), store.get_memory(b));
        } catch (const Error& err) {
            throw Error(ErrorCode::LinkingBackendError,
                        "link classification failed for (" + std::to_string(a) + "," +
                            std::to_string(b) + "): " + err.what());
        } catch (const std::exception& err) {
            throw Error(ErrorCode::LinkingBackendError, err.what());
        }
    };

    // Decisions are collected first so that a classifier failure leaves *this intact.
    std::vector<MemoryLink> decided;
    std::set<MemoryLink> seen = links_;
    auto record = [&](MemoryLink link) {
        if (seen.insert(link).second) decided.push_back(link);
    };

    for (std::size_t i = 0; i < fresh.size(); ++i) {
        for (std::size_t j = i + 1; j < fresh.size(); ++j) {
            if (classify(fresh[i], fresh[j])) record(MemoryLink::canonical(fresh[i], fresh[j]));
        }
    }

    // Old components contain no new ids yet, so their tails are unaffected by phase 1.
    std::map<MemoryId, MemoryId> tails;
    for (const auto o : old) tails.emplace(o, *component(o).rbegin());

    for (const auto o : old) {
        for (const auto n : fresh) {
            if (classify(o, n)) record(MemoryLink::canonical(tails.at(o), n));
        }
    }

    for (const auto& link : decided) insert_unchecked(link);
    return decided;
}

}  // namespace egomem
