#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "homophily/rng.hpp"

namespace homophily {

/// A mixed block cannot alternate because its two sides differ by more
/// than one student.
class AlternationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AllocationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Student types are indexed 0..n_types-1 with the high type first. The
// one-treatment design has two types (H, L); the two-treatment design has
// four (achievement x centrality: HH, HL, LH, LL).

/// Unordered (own type, peer type) pair. a <= b; a != b marks a mixed
/// combination.
struct Combination {
  int a = 0;
  int b = 0;
  bool mixed() const { return a != b; }
};

/// All combinations for n_types, enumerated lexicographically by (a, b).
std::vector<Combination> combinations(int n_types);
int combination_index(int n_types, int type, int arm);
/// "A"/"B"/"C" for two types, "HH+LH"-style pairs for four.
std::string combination_label(int n_types, int index);
std::string type_label(int n_types, int type);

struct RandomizationUnit {
  int student_id = 0;
  int type = 0;
};

struct TreatmentAssignment {
  int student_id = 0;
  int type = 0;
  /// Assigned peer type.
  int arm = 0;
  int combination = 0;
};

struct AssignmentResult {
  std::vector<TreatmentAssignment> assignments;
  /// Set when the cell was too small for the target proportions or a mixed
  /// combination had to be rebalanced.
  bool flagged = false;
};

/// Per type: share 2/(T+1) assigned to same-type peers and 1/(T+1) to each
/// other type, which makes every combination the same size when types are
/// balanced (two-thirds/one-third for two types). Counts are rounded by
/// largest remainder with a random tie-break, then mixed combinations are
/// trimmed so their two sides differ by at most one.
AssignmentResult assign_treatments(std::span<const RandomizationUnit> units,
                                   int n_types, CounterStream& rng);

/// Uniformly random order of the combination indices.
std::vector<int> order_combinations(int n_types, CounterStream& rng);

struct ListRow {
  int position = 0;  // 1-based
  int student_id = 0;
  int type = 0;
  int arm = 0;
  int combination = 0;
};

struct RandomizationList {
  std::string cell;
  int n_types = 2;
  std::vector<int> order;
  std::vector<ListRow> rows;
};

/// Blocks follow `order`; students are shuffled within blocks, and mixed
/// blocks alternate the two types starting with the larger side (the
/// higher type on ties).
RandomizationList build_list(std::string cell,
                             std::span<const TreatmentAssignment> assignments,
                             int n_types, const std::vector<int>& order,
                             CounterStream& rng);
/// Draws the block order from `rng` first, then builds.
RandomizationList build_list(std::string cell,
                             std::span<const TreatmentAssignment> assignments,
                             int n_types, CounterStream& rng);

/// True iff positions run 1..n, each row's combination matches its
/// (type, arm), and every list neighbor inside the same block has the
/// type of the row's assigned arm.
bool verify_alternation(const RandomizationList& list);

struct Bed {
  int student_id = 0;
  int bed = 0;  // 1-based within the dorm
};

struct Dorm {
  int dorm_id = 0;
  std::string cell;
  std::vector<Bed> beds;
  int size() const { return static_cast<int>(beds.size()); }
};

/// Dorm sizes that cycle `pattern` and truncate the last dorm so the total
/// equals n.
std::vector<int> dorm_size_sequence(int n, std::span<const int> pattern);

/// Consecutive list segments fill dorms in order. Sizes must sum to the
/// list length.
std::vector<Dorm> chunk_into_dorms(const RandomizationList& list,
                                   std::span<const int> dorm_sizes,
                                   int first_dorm_id = 1);

/// Dorms under five beds: every roommate is a neighbor. Larger dorms pair
/// beds into bunks (2k-1, 2k) laid out in a line; neighbors share a bunk or
/// sit in adjacent bunks.
bool beds_are_neighbors(int dorm_size, int bed_a, int bed_b);

std::vector<std::pair<int, int>> physical_neighbors(std::span<const Dorm> dorms);

struct ProximityIndicator {
  int i = 0;
  int j = 0;
  /// |position_i - position_j| within a shared list, 0 across lists.
  int list_distance = 0;
  bool physical_neighbor = false;

  bool within(int d) const { return list_distance > 0 && list_distance <= d; }
};

/// O(1) lookups of list distance and physical adjacency by student id.
class ProximityIndex {
 public:
  ProximityIndex(std::span<const RandomizationList> lists,
                 std::span<const Dorm> dorms);

  bool contains(int student) const { return slots_.count(student) > 0; }
  /// 0 when the students sit on different lists.
  int list_distance(int i, int j) const;
  bool physical_neighbor(int i, int j) const;
  int position(int student) const;
  int dorm_id(int student) const;
  int bed(int student) const;

 private:
  struct Slot {
    int list = -1;
    int position = 0;
    int dorm = -1;
    int dorm_id = 0;
    int dorm_size = 0;
    int bed = 0;
  };
  const Slot& slot(int student) const;

  std::unordered_map<int, Slot> slots_;
};

/// One row per unordered pair sharing a list.
std::vector<ProximityIndicator> proximity_indicators(
    std::span<const RandomizationList> lists, std::span<const Dorm> dorms);

struct ComplianceReport {
  int students = 0;
  int compliant = 0;
  double rate() const {
    return students == 0 ? 1.0 : static_cast<double>(compliant) / students;
  }
};

/// A student complies when the type shares among themself and their
/// physical neighbors equal the shares of their combination (all own type
/// for a pure combination, half and half for a mixed one).
ComplianceReport compliance(const RandomizationList& list,
                            std::span<const Dorm> dorms);

struct CellRandomization {
  RandomizationList list;
  std::vector<Dorm> dorms;
  bool flagged = false;
};

/// assign_treatments -> order_combinations -> build_list -> chunk_into_dorms
/// using one stream.
CellRandomization randomize_cell(std::string cell,
                                 std::span<const RandomizationUnit> units,
                                 int n_types, std::span<const int> dorm_pattern,
                                 CounterStream& rng, int first_dorm_id = 1);

}  // namespace homophily
