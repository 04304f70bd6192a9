#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spice/families.hpp"
#include "spice/types.hpp"

namespace spice {

enum class Side { Person, Item };

// One observed person-item interaction. Indices are dense 0-based
// positions into the person/item unit arrays.
struct ResponseRecord {
    int obs_index = 0;
    int person_index = 0;
    int item_index = 0;
    real value = 0;
};

// A person or an item. `latent` is theta for persons and the
// unconstrained psi for items; it doubles as the anchor value when
// `fixed` is set. `weight` is meaningful for persons only.
struct Unit {
    int unit_id = 0;
    int block_id = 0;
    Vector latent;
    Vector features;
    bool fixed = false;
    real weight = 1;
};

// A mutually exclusive subpopulation of units sharing one latent
// regression (and, for item blocks, one response family).
struct BlockSpec {
    int block_id = 0;
    Side side = Side::Person;
    int dim_K = 1;
    int feature_count_p = 1;
    ItemFamily family;  // item blocks only
    std::vector<int> unit_ids;
};

struct Dataset {
    std::vector<ResponseRecord> responses;
    std::vector<BlockSpec> person_blocks;
    std::vector<BlockSpec> item_blocks;
    std::vector<Unit> persons;
    std::vector<Unit> items;
    std::vector<std::string> person_ids;  // original labels, by dense index
    std::vector<std::string> item_ids;

    const BlockSpec& block_of(Side side, int block_id) const;
    const ItemFamily& family_of_item(int item_index) const;
};

struct LinkEntry {
    int obs = 0;           // response index n
    int partner_block = 0; // block id of the unit on the other side
    int partner = 0;       // dense unit index on the other side
};

// Sparse bidirectional person <-> response <-> item views in CSR form.
// Read-only after build; iterating either side touches every response
// exactly once.
class LinkageIndex {
public:
    std::span<const LinkEntry> of_person(int person_index) const {
        return {entries_person_.data() + offsets_person_[person_index],
                static_cast<size_t>(offsets_person_[person_index + 1] -
                                    offsets_person_[person_index])};
    }
    std::span<const LinkEntry> of_item(int item_index) const {
        return {entries_item_.data() + offsets_item_[item_index],
                static_cast<size_t>(offsets_item_[item_index + 1] - offsets_item_[item_index])};
    }
    std::span<const LinkEntry> of_unit(Side side, int index) const {
        return side == Side::Person ? of_person(index) : of_item(index);
    }
    int response_count() const { return static_cast<int>(entries_person_.size()); }

    friend LinkageIndex build_linkage(const std::vector<ResponseRecord>& responses,
                                      const Dataset& data);

private:
    std::vector<int> offsets_person_, offsets_item_;
    std::vector<LinkEntry> entries_person_, entries_item_;
};

// Builds both views. Throws ValidationError on an empty response set or
// dangling person/item indices (all offending rows are listed).
LinkageIndex build_linkage(const std::vector<ResponseRecord>& responses, const Dataset& data);

// Structural consistency checks (block membership, latent/feature
// lengths, response admissibility per item family). Throws
// ValidationError with row context.
void validate_dataset(const Dataset& data);

}  // namespace spice
