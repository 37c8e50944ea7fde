#pragma once

#include <cstdint>
#include <vector>

#include "mul/common.hpp"

#include <json.hpp>

namespace mul {

/// Empirical joint counts of phone labels (rows) vs unit labels (columns).
struct ContingencyTable {
    int num_phones = 0;
    int num_units = 0;
    std::vector<uint64_t> counts;  // num_phones * num_units row-major
    uint64_t total = 0;

    uint64_t at(int phone, int unit) const {
        return counts[static_cast<size_t>(phone) * num_units + unit];
    }
    uint64_t& at(int phone, int unit) {
        return counts[static_cast<size_t>(phone) * num_units + unit];
    }
    uint64_t row_sum(int phone) const;
    uint64_t col_sum(int unit) const;
};

/// Counts frame-level co-occurrences across utterance pairs matched by id.
/// Throws naming the utterance on a length mismatch, and on empty input.
ContingencyTable build_contingency(const std::vector<LabelSequence>& phones,
                                   const std::vector<LabelSequence>& units);
ContingencyTable build_contingency(const std::vector<std::pair<std::vector<int>,
                                                               std::vector<int>>>& pairs);

/// E_{p_z}[p_{y|z}(y*(j) | j)]: frame accuracy of transcribing each unit
/// with its most likely phone.
double phone_purity(const ContingencyTable& t);

/// E_{p_y}[p_{z|y}(z*(i) | i)], the counterpart of phone purity.
double cluster_purity(const ContingencyTable& t);

/// I(y;z) / H(y), natural log, 0*log 0 := 0, clamped into [0, 1].
/// Throws "degenerate phone distribution" when H(y) = 0.
double pnmi(const ContingencyTable& t);

/// Most likely unit per phone / phone per unit; argmax ties break toward
/// the lowest index.
std::vector<int> most_likely_unit(const ContingencyTable& t);
std::vector<int> most_likely_phone(const ContingencyTable& t);

nlohmann::json metrics_report(const ContingencyTable& t);

}  // namespace mul
