#include "mul/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mul {

uint64_t ContingencyTable::row_sum(int phone) const {
    uint64_t s = 0;
    for (int j = 0; j < num_units; ++j) s += at(phone, j);
    return s;
}

uint64_t ContingencyTable::col_sum(int unit) const {
    uint64_t s = 0;
    for (int i = 0; i < num_phones; ++i) s += at(i, unit);
    return s;
}

ContingencyTable build_contingency(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs) {
    int max_phone = -1, max_unit = -1;
    uint64_t total = 0;
    for (const auto& [y, z] : pairs) {
        if (y.size() != z.size())
            throw std::runtime_error("label length mismatch: " + std::to_string(y.size()) +
                                     " phones vs " + std::to_string(z.size()) + " units");
        for (int v : y) {
            if (v < 0) throw std::runtime_error("negative phone label");
            max_phone = std::max(max_phone, v);
        }
        for (int v : z) {
            if (v < 0) throw std::runtime_error("negative unit label");
            max_unit = std::max(max_unit, v);
        }
        total += y.size();
    }
    if (total == 0) throw std::runtime_error("no frames to count");
    ContingencyTable t;
    t.num_phones = max_phone + 1;
    t.num_units = max_unit + 1;
    t.counts.assign(static_cast<size_t>(t.num_phones) * t.num_units, 0);
    t.total = total;
    for (const auto& [y, z] : pairs)
        for (size_t i = 0; i < y.size(); ++i) ++t.at(y[i], z[i]);
    return t;
}

ContingencyTable build_contingency(const std::vector<LabelSequence>& phones,
                                   const std::vector<LabelSequence>& units) {
    std::map<std::string, const LabelSequence*> by_id;
    for (const auto& u : units) by_id[u.utterance_id] = &u;
    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
    for (const auto& p : phones) {
        auto it = by_id.find(p.utterance_id);
        if (it == by_id.end())
            throw std::runtime_error("no unit labels for utterance " + p.utterance_id);
        if (p.labels.size() != it->second->labels.size())
            throw std::runtime_error("label length mismatch in utterance " + p.utterance_id +
                                     ": " + std::to_string(p.labels.size()) + " phones vs " +
                                     std::to_string(it->second->labels.size()) + " units");
        pairs.emplace_back(p.labels, it->second->labels);
    }
    return build_contingency(pairs);
}

double phone_purity(const ContingencyTable& t) {
    // sum_j max_i counts(i,j), one division at the end so a diagonal table
    // gives exactly 1.0
    uint64_t acc = 0;
    for (int j = 0; j < t.num_units; ++j) {
        uint64_t best = 0;
        for (int i = 0; i < t.num_phones; ++i) best = std::max(best, t.at(i, j));
        acc += best;
    }
    return static_cast<double>(acc) / static_cast<double>(t.total);
}

double cluster_purity(const ContingencyTable& t) {
    uint64_t acc = 0;
    for (int i = 0; i < t.num_phones; ++i) {
        uint64_t best = 0;
        for (int j = 0; j < t.num_units; ++j) best = std::max(best, t.at(i, j));
        acc += best;
    }
    return static_cast<double>(acc) / static_cast<double>(t.total);
}

double pnmi(const ContingencyTable& t) {
    const double n = static_cast<double>(t.total);
    std::vector<uint64_t> row(t.num_phones), col(t.num_units);
    for (int i = 0; i < t.num_phones; ++i) row[i] = t.row_sum(i);
    for (int j = 0; j < t.num_units; ++j) col[j] = t.col_sum(j);

    // H(y) and I(y;z) share term layout: both iterate phones in row order
    // with ratios of exact integer products, so a deterministic table gives
    // bitwise I == H and an independent one gives exact zero terms.
    double h_y = 0.0;
    for (int i = 0; i < t.num_phones; ++i) {
        if (row[i] == 0) continue;
        h_y += (static_cast<double>(row[i]) / n) *
               std::log(n / static_cast<double>(row[i]));
    }
    if (h_y == 0.0) throw std::runtime_error("degenerate phone distribution (single phone class)");

    double mi = 0.0;
    for (int i = 0; i < t.num_phones; ++i) {
        for (int j = 0; j < t.num_units; ++j) {
            const uint64_t c = t.at(i, j);
            if (c == 0) continue;
            const double num = static_cast<double>(c * t.total);
            const double den = static_cast<double>(row[i] * col[j]);
            mi += (static_cast<double>(c) / n) * std::log(num / den);
        }
    }
    return std::clamp(mi / h_y, 0.0, 1.0);
}

std::vector<int> most_likely_unit(const ContingencyTable& t) {
    std::vector<int> z_star(t.num_phones, 0);
    for (int i = 0; i < t.num_phones; ++i) {
        uint64_t best = t.at(i, 0);
        for (int j = 1; j < t.num_units; ++j) {
            if (t.at(i, j) > best) {
                best = t.at(i, j);
                z_star[i] = j;
            }
        }
    }
    return z_star;
}

std::vector<int> most_likely_phone(const ContingencyTable& t) {
    std::vector<int> y_star(t.num_units, 0);
    for (int j = 0; j < t.num_units; ++j) {
        uint64_t best = t.at(0, j);
        for (int i = 1; i < t.num_phones; ++i) {
            if (t.at(i, j) > best) {
                best = t.at(i, j);
                y_star[j] = i;
            }
        }
    }
    return y_star;
}

nlohmann::json metrics_report(const ContingencyTable& t) {
    return {{"phone_purity", phone_purity(t)},
            {"cluster_purity", cluster_purity(t)},
            {"pnmi", pnmi(t)},
            {"num_phones", t.num_phones},
            {"num_units", t.num_units},
            {"num_frames", t.total}};
}

}  // namespace mul
