#include "homophily/randomization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>

#include <fmt/core.h>

namespace homophily {

namespace {

void check_types(int n_types) {
  if (n_types != 2 && n_types != 4)
    throw AllocationError(
        fmt::format("designs use 2 or 4 student types, got {}", n_types));
}

}  // namespace

std::vector<Combination> combinations(int n_types) {
  check_types(n_types);
  std::vector<Combination> out;
  for (int a = 0; a < n_types; ++a)
    for (int b = a; b < n_types; ++b) out.push_back({a, b});
  return out;
}

int combination_index(int n_types, int type, int arm) {
  const int a = std::min(type, arm);
  const int b = std::max(type, arm);
  // Row a holds n_types - a entries.
  int index = 0;
  for (int row = 0; row < a; ++row) index += n_types - row;
  return index + (b - a);
}

std::string type_label(int n_types, int type) {
  check_types(n_types);
  if (n_types == 2) return type == 0 ? "H" : "L";
  static const char* four[] = {"HH", "HL", "LH", "LL"};
  return four[type];
}

std::string combination_label(int n_types, int index) {
  const auto combos = combinations(n_types);
  if (n_types == 2) {
    // A = H with H peers, B = mixed, C = L with L peers.
    static const char* names[] = {"A", "B", "C"};
    return names[index];
  }
  const auto& c = combos.at(static_cast<std::size_t>(index));
  return type_label(n_types, c.a) + "+" + type_label(n_types, c.b);
}

AssignmentResult assign_treatments(std::span<const RandomizationUnit> units,
                                   int n_types, CounterStream& rng) {
  check_types(n_types);
  AssignmentResult result;
  if (units.empty()) return result;

  std::vector<std::vector<std::size_t>> members(n_types);
  for (std::size_t u = 0; u < units.size(); ++u) {
    const int t = units[u].type;
    if (t < 0 || t >= n_types)
      throw AllocationError(fmt::format("student {} has type {} outside [0,{})",
                                        units[u].student_id, t, n_types));
    members[t].push_back(u);
  }

  const double same_share = 2.0 / (n_types + 1);
  const double other_share = 1.0 / (n_types + 1);

  // counts[t][p]: students of type t assigned to peer type p.
  std::vector<std::vector<int>> counts(n_types, std::vector<int>(n_types, 0));
  for (int t = 0; t < n_types; ++t) {
    const int n = static_cast<int>(members[t].size());
    if (n > 0 && n < n_types + 1) result.flagged = true;
    std::vector<double> frac(n_types);
    std::vector<double> tie(n_types);
    int assigned = 0;
    for (int p = 0; p < n_types; ++p) {
      const double quota = n * (p == t ? same_share : other_share);
      counts[t][p] = static_cast<int>(std::floor(quota));
      frac[p] = quota - counts[t][p];
      tie[p] = rng.uniform();
      assigned += counts[t][p];
    }
    std::vector<int> dest(n_types);
    std::iota(dest.begin(), dest.end(), 0);
    std::sort(dest.begin(), dest.end(), [&](int x, int y) {
      if (frac[x] != frac[y]) return frac[x] > frac[y];
      return tie[x] < tie[y];
    });
    for (int k = 0; k < n - assigned; ++k) ++counts[t][dest[k]];
  }

  for (int t = 0; t < n_types; ++t) {
    for (int p = t + 1; p < n_types; ++p) {
      while (counts[t][p] - counts[p][t] > 1) {
        --counts[t][p];
        ++counts[t][t];
        result.flagged = true;
      }
      while (counts[p][t] - counts[t][p] > 1) {
        --counts[p][t];
        ++counts[p][p];
        result.flagged = true;
      }
    }
  }

  result.assignments.resize(units.size());
  for (int t = 0; t < n_types; ++t) {
    auto order = members[t];
    rng.shuffle(order);
    std::size_t next = 0;
    for (int p = 0; p < n_types; ++p) {
      for (int k = 0; k < counts[t][p]; ++k) {
        const std::size_t u = order[next++];
        result.assignments[u] = {units[u].student_id, t, p,
                                 combination_index(n_types, t, p)};
      }
    }
  }
  return result;
}

std::vector<int> order_combinations(int n_types, CounterStream& rng) {
  std::vector<int> order(combinations(n_types).size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  return order;
}

RandomizationList build_list(std::string cell,
                             std::span<const TreatmentAssignment> assignments,
                             int n_types, const std::vector<int>& order,
                             CounterStream& rng) {
  const auto combos = combinations(n_types);
  {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expected(combos.size());
    std::iota(expected.begin(), expected.end(), 0);
    if (sorted != expected)
      throw AllocationError("combination order is not a permutation");
  }

  std::vector<std::vector<TreatmentAssignment>> blocks(combos.size());
  for (const auto& a : assignments) {
    if (a.combination != combination_index(n_types, a.type, a.arm))
      throw AllocationError(fmt::format(
          "student {} carries combination {} inconsistent with its type/arm",
          a.student_id, a.combination));
    blocks[static_cast<std::size_t>(a.combination)].push_back(a);
  }

  RandomizationList list;
  list.cell = std::move(cell);
  list.n_types = n_types;
  list.order = order;
  auto append = [&](const TreatmentAssignment& a) {
    list.rows.push_back({static_cast<int>(list.rows.size()) + 1, a.student_id,
                         a.type, a.arm, a.combination});
  };

  for (int index : order) {
    auto& block = blocks[static_cast<std::size_t>(index)];
    const Combination& combo = combos[static_cast<std::size_t>(index)];
    if (!combo.mixed()) {
      rng.shuffle(block);
      for (const auto& a : block) append(a);
      continue;
    }
    std::vector<TreatmentAssignment> low_side, high_side;
    for (const auto& a : block) (a.type == combo.a ? low_side : high_side).push_back(a);
    rng.shuffle(low_side);
    rng.shuffle(high_side);
    const long diff = static_cast<long>(low_side.size()) -
                      static_cast<long>(high_side.size());
    if (std::labs(diff) > 1)
      throw AlternationError(fmt::format(
          "cell {}: mixed combination {} has {} {} and {} {} students; "
          "alternation needs sides within one of each other",
          list.cell, combination_label(n_types, index), low_side.size(),
          type_label(n_types, combo.a), high_side.size(),
          type_label(n_types, combo.b)));
    const bool low_first = low_side.size() >= high_side.size();
    const auto& first = low_first ? low_side : high_side;
    const auto& second = low_first ? high_side : low_side;
    for (std::size_t k = 0; k < first.size(); ++k) {
      append(first[k]);
      if (k < second.size()) append(second[k]);
    }
  }
  return list;
}

RandomizationList build_list(std::string cell,
                             std::span<const TreatmentAssignment> assignments,
                             int n_types, CounterStream& rng) {
  const auto order = order_combinations(n_types, rng);
  return build_list(std::move(cell), assignments, n_types, order, rng);
}

bool verify_alternation(const RandomizationList& list) {
  if (list.n_types != 2 && list.n_types != 4) return false;
  const auto& rows = list.rows;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const ListRow& row = rows[k];
    if (row.position != static_cast<int>(k) + 1) return false;
    if (row.type < 0 || row.type >= list.n_types || row.arm < 0 ||
        row.arm >= list.n_types)
      return false;
    if (row.combination != combination_index(list.n_types, row.type, row.arm))
      return false;
    for (std::size_t nb : {k - 1, k + 1}) {
      if (nb >= rows.size()) continue;  // k - 1 wraps for k == 0
      if (rows[nb].combination != row.combination) continue;
      if (rows[nb].type != row.arm) return false;
    }
  }
  return true;
}

std::vector<int> dorm_size_sequence(int n, std::span<const int> pattern) {
  if (pattern.empty()) throw AllocationError("dorm size pattern is empty");
  for (int s : pattern)
    if (s <= 0) throw AllocationError("dorm sizes must be positive");
  std::vector<int> sizes;
  int filled = 0;
  for (std::size_t k = 0; filled < n; ++k) {
    const int s = std::min(pattern[k % pattern.size()], n - filled);
    sizes.push_back(s);
    filled += s;
  }
  return sizes;
}

std::vector<Dorm> chunk_into_dorms(const RandomizationList& list,
                                   std::span<const int> dorm_sizes,
                                   int first_dorm_id) {
  long total = 0;
  for (int s : dorm_sizes) {
    if (s <= 0) throw AllocationError("dorm sizes must be positive");
    total += s;
  }
  if (total != static_cast<long>(list.rows.size()))
    throw AllocationError(fmt::format(
        "cell {}: dorm sizes sum to {} but the list has {} students", list.cell,
        total, list.rows.size()));
  std::vector<Dorm> dorms;
  std::size_t next = 0;
  for (std::size_t d = 0; d < dorm_sizes.size(); ++d) {
    Dorm dorm{first_dorm_id + static_cast<int>(d), list.cell, {}};
    for (int bed = 1; bed <= dorm_sizes[d]; ++bed)
      dorm.beds.push_back({list.rows[next++].student_id, bed});
    dorms.push_back(std::move(dorm));
  }
  return dorms;
}

bool beds_are_neighbors(int dorm_size, int bed_a, int bed_b) {
  if (bed_a == bed_b) return false;
  if (dorm_size < 5) return true;
  const int bunk_a = (bed_a + 1) / 2;
  const int bunk_b = (bed_b + 1) / 2;
  return std::abs(bunk_a - bunk_b) <= 1;
}

std::vector<std::pair<int, int>> physical_neighbors(std::span<const Dorm> dorms) {
  std::vector<std::pair<int, int>> out;
  for (const auto& dorm : dorms) {
    for (std::size_t x = 0; x < dorm.beds.size(); ++x)
      for (std::size_t y = x + 1; y < dorm.beds.size(); ++y)
        if (beds_are_neighbors(dorm.size(), dorm.beds[x].bed, dorm.beds[y].bed))
          out.emplace_back(dorm.beds[x].student_id, dorm.beds[y].student_id);
  }
  return out;
}

ProximityIndex::ProximityIndex(std::span<const RandomizationList> lists,
                               std::span<const Dorm> dorms) {
  for (std::size_t l = 0; l < lists.size(); ++l) {
    for (const auto& row : lists[l].rows) {
      auto [it, inserted] = slots_.try_emplace(row.student_id);
      if (!inserted)
        throw AllocationError(
            fmt::format("student {} appears on more than one list row", row.student_id));
      it->second.list = static_cast<int>(l);
      it->second.position = row.position;
    }
  }
  for (std::size_t d = 0; d < dorms.size(); ++d) {
    for (const auto& bed : dorms[d].beds) {
      auto it = slots_.find(bed.student_id);
      if (it == slots_.end())
        throw AllocationError(fmt::format(
            "student {} has a bed but no list row", bed.student_id));
      it->second.dorm = static_cast<int>(d);
      it->second.dorm_id = dorms[d].dorm_id;
      it->second.dorm_size = dorms[d].size();
      it->second.bed = bed.bed;
    }
  }
}

const ProximityIndex::Slot& ProximityIndex::slot(int student) const {
  auto it = slots_.find(student);
  if (it == slots_.end())
    throw AllocationError(
        fmt::format("student {} is missing from the allocation", student));
  return it->second;
}

int ProximityIndex::list_distance(int i, int j) const {
  const Slot& a = slot(i);
  const Slot& b = slot(j);
  if (a.list != b.list) return 0;
  return std::abs(a.position - b.position);
}

bool ProximityIndex::physical_neighbor(int i, int j) const {
  const Slot& a = slot(i);
  const Slot& b = slot(j);
  if (a.dorm < 0 || a.dorm != b.dorm) return false;
  return beds_are_neighbors(a.dorm_size, a.bed, b.bed);
}

int ProximityIndex::position(int student) const { return slot(student).position; }
int ProximityIndex::dorm_id(int student) const { return slot(student).dorm_id; }
int ProximityIndex::bed(int student) const { return slot(student).bed; }

std::vector<ProximityIndicator> proximity_indicators(
    std::span<const RandomizationList> lists, std::span<const Dorm> dorms) {
  const ProximityIndex index(lists, dorms);
  std::vector<ProximityIndicator> out;
  for (const auto& list : lists) {
    const auto& rows = list.rows;
    for (std::size_t x = 0; x < rows.size(); ++x) {
      for (std::size_t y = x + 1; y < rows.size(); ++y) {
        const int i = std::min(rows[x].student_id, rows[y].student_id);
        const int j = std::max(rows[x].student_id, rows[y].student_id);
        out.push_back({i, j, index.list_distance(i, j),
                       index.physical_neighbor(i, j)});
      }
    }
  }
  return out;
}

ComplianceReport compliance(const RandomizationList& list,
                            std::span<const Dorm> dorms) {
  std::unordered_map<int, const ListRow*> by_id;
  for (const auto& row : list.rows) by_id[row.student_id] = &row;

  std::unordered_map<int, std::vector<int>> peers;
  for (const auto& [i, j] : physical_neighbors(dorms)) {
    if (!by_id.count(i) || !by_id.count(j)) continue;
    peers[i].push_back(j);
    peers[j].push_back(i);
  }

  ComplianceReport report;
  for (const auto& row : list.rows) {
    ++report.students;
    std::map<int, int> type_counts;
    ++type_counts[row.type];
    for (int peer : peers[row.student_id]) ++type_counts[by_id.at(peer)->type];
    int group = 0;
    for (const auto& [t, n] : type_counts) group += n;

    bool ok;
    if (row.type == row.arm) {
      ok = type_counts.size() == 1;
    } else {
      ok = type_counts.size() == 2 && type_counts.count(row.arm) &&
           2 * type_counts[row.type] == group;
    }
    if (ok) ++report.compliant;
  }
  return report;
}

CellRandomization randomize_cell(std::string cell,
                                 std::span<const RandomizationUnit> units,
                                 int n_types, std::span<const int> dorm_pattern,
                                 CounterStream& rng, int first_dorm_id) {
  CellRandomization out;
  auto assignment = assign_treatments(units, n_types, rng);
  out.flagged = assignment.flagged;
  out.list = build_list(std::move(cell), assignment.assignments, n_types, rng);
  const auto sizes =
      dorm_size_sequence(static_cast<int>(out.list.rows.size()), dorm_pattern);
  out.dorms = chunk_into_dorms(out.list, sizes, first_dorm_id);
  return out;
}

}  // namespace homophily
