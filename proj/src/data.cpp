#include "spice/data.hpp"

#include <algorithm>
#include <sstream>

#include "spice/errors.hpp"

namespace spice {

const BlockSpec& Dataset::block_of(Side side, int block_id) const {
    const auto& blocks = (side == Side::Person) ? person_blocks : item_blocks;
    for (const auto& b : blocks) {
        if (b.block_id == block_id) return b;
    }
    throw ValidationError("unknown block id " + std::to_string(block_id));
}

const ItemFamily& Dataset::family_of_item(int item_index) const {
    return block_of(Side::Item, items[item_index].block_id).family;
}

LinkageIndex build_linkage(const std::vector<ResponseRecord>& responses, const Dataset& data) {
    if (responses.empty()) throw ValidationError("response set is empty");

    const int n_persons = static_cast<int>(data.persons.size());
    const int n_items = static_cast<int>(data.items.size());

    std::vector<int> bad;
    for (const auto& r : responses) {
        if (r.person_index < 0 || r.person_index >= n_persons || r.item_index < 0 ||
            r.item_index >= n_items) {
            bad.push_back(r.obs_index);
        }
    }
    if (!bad.empty()) {
        std::ostringstream msg;
        msg << "responses with dangling person/item indices at rows:";
        for (size_t i = 0; i < bad.size() && i < 50; ++i) msg << ' ' << bad[i];
        if (bad.size() > 50) msg << " ... (" << bad.size() << " total)";
        throw ValidationError(msg.str());
    }

    LinkageIndex idx;
    idx.offsets_person_.assign(n_persons + 1, 0);
    idx.offsets_item_.assign(n_items + 1, 0);
    for (const auto& r : responses) {
        ++idx.offsets_person_[r.person_index + 1];
        ++idx.offsets_item_[r.item_index + 1];
    }
    for (int i = 0; i < n_persons; ++i) idx.offsets_person_[i + 1] += idx.offsets_person_[i];
    for (int j = 0; j < n_items; ++j) idx.offsets_item_[j + 1] += idx.offsets_item_[j];

    idx.entries_person_.resize(responses.size());
    idx.entries_item_.resize(responses.size());
    std::vector<int> fill_p(idx.offsets_person_.begin(), idx.offsets_person_.end() - 1);
    std::vector<int> fill_i(idx.offsets_item_.begin(), idx.offsets_item_.end() - 1);
    for (const auto& r : responses) {
        idx.entries_person_[fill_p[r.person_index]++] = {
            r.obs_index, data.items[r.item_index].block_id, r.item_index};
        idx.entries_item_[fill_i[r.item_index]++] = {
            r.obs_index, data.persons[r.person_index].block_id, r.person_index};
    }
    return idx;
}

void validate_dataset(const Dataset& data) {
    // blocks partition each side; dims match
    auto check_side = [&](const std::vector<BlockSpec>& blocks, const std::vector<Unit>& units,
                          Side side) {
        std::vector<int> owner(units.size(), -1);
        for (const auto& b : blocks) {
            if (b.dim_K < 1) throw ValidationError("block " + std::to_string(b.block_id) +
                                                   ": dim must be >= 1");
            if (side == Side::Item && b.dim_K != b.family.param_count()) {
                throw ValidationError("block " + std::to_string(b.block_id) +
                                      ": dim does not match family parameter count");
            }
            for (int u : b.unit_ids) {
                if (u < 0 || u >= static_cast<int>(units.size())) {
                    throw ValidationError("block " + std::to_string(b.block_id) +
                                          " references unknown unit " + std::to_string(u));
                }
                if (owner[u] != -1) {
                    throw ValidationError("unit " + std::to_string(u) +
                                          " assigned to more than one block");
                }
                owner[u] = b.block_id;
            }
        }
        for (size_t u = 0; u < units.size(); ++u) {
            if (owner[u] == -1) {
                throw ValidationError("unit " + std::to_string(u) + " belongs to no block");
            }
            if (owner[u] != units[u].block_id) {
                throw ValidationError("unit " + std::to_string(u) +
                                      ": block_id disagrees with block roster");
            }
            const BlockSpec& b = data.block_of(side, units[u].block_id);
            if (units[u].latent.size() != b.dim_K) {
                throw ValidationError("unit " + std::to_string(u) + ": latent length " +
                                      std::to_string(units[u].latent.size()) +
                                      " != block dim " + std::to_string(b.dim_K));
            }
            if (units[u].features.size() != b.feature_count_p) {
                throw ValidationError("unit " + std::to_string(u) + ": feature length " +
                                      std::to_string(units[u].features.size()) +
                                      " != block feature count " +
                                      std::to_string(b.feature_count_p));
            }
        }
    };
    check_side(data.person_blocks, data.persons, Side::Person);
    check_side(data.item_blocks, data.items, Side::Item);

    if (!data.person_blocks.empty()) {
        const int k0 = data.person_blocks.front().dim_K;
        for (const auto& b : data.person_blocks) {
            if (b.dim_K != k0) {
                throw ValidationError("all person blocks must share the same dimension");
            }
        }
    }

    for (const auto& r : data.responses) {
        const ItemFamily& fam = data.family_of_item(r.item_index);
        if (!value_admissible(fam, r.value)) {
            throw ValidationError("row " + std::to_string(r.obs_index) + ": response " +
                                  std::to_string(static_cast<double>(r.value)) +
                                  " not admissible for family " + fam.name());
        }
    }

    for (const auto& p : data.persons) {
        if (!(p.weight >= 0)) {
            throw ValidationError("person " + std::to_string(p.unit_id) +
                                  " has negative weight");
        }
    }
}

}  // namespace spice
