#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

// Symbolic side of the generative story: per-token mention indicator R,
// entity index E and remaining mention length L, plus the growing set of
// entities. Nothing here depends on model parameters.
namespace enlm::entity {

// E value for tokens outside any mention. Real entities are numbered from 1.
inline constexpr std::size_t kNoEntity = 0;
inline constexpr std::size_t kDefaultMaxLength = 25;
// Distance buckets: [1], [2,3], [4,7], [8,15], [16,31], [32,63], [64,inf).
inline constexpr std::size_t kDistanceFeatures = 7;

struct EntityAnnotation {
  int r = 0;
  std::size_t e = kNoEntity;
  std::size_t l = 1;

  static EntityAnnotation outside() { return {}; }
  static EntityAnnotation mention(std::size_t entity, std::size_t remaining) {
    return {1, entity, remaining};
  }
  friend bool operator==(const EntityAnnotation&, const EntityAnnotation&) = default;
};

class EntityRegistry {
 public:
  // Number of entities mentioned so far (K). The new-entity index is K + 1.
  std::size_t size() const { return last_mention_.size(); }
  std::size_t new_entity_index() const { return size() + 1; }
  std::optional<std::size_t> current() const { return current_; }
  // Token offset of the most recent token mentioning `e`.
  std::size_t last_mention(std::size_t e) const;
  // Registers a mention token of `e` at `position`, creating e == K + 1.
  void record(std::size_t e, std::size_t position);

 private:
  std::vector<std::size_t> last_mention_;
  std::optional<std::size_t> current_;
};

class StateMachine {
 public:
  explicit StateMachine(std::size_t max_length = kDefaultMaxLength);

  std::size_t max_length() const { return max_length_; }
  std::size_t position() const { return position_; }
  const EntityAnnotation& prev() const { return prev_; }
  const EntityRegistry& registry() const { return registry_; }

  // True when the next token is not forced to continue a mention.
  bool at_choice_point() const { return prev_.l == 1; }
  // {1, ..., K + 1}; only valid at a choice point.
  std::vector<std::size_t> admissible_entities() const;
  // The only annotation accepted mid-mention.
  EntityAnnotation forced_continuation() const;

  // Throws ContractError naming the violated rule.
  void check(const EntityAnnotation& choice) const;
  // Consume one token's annotation after check().
  void advance(const EntityAnnotation& choice);

 private:
  std::size_t max_length_;
  std::size_t position_ = 0;
  EntityAnnotation prev_;
  EntityRegistry registry_;
};

std::size_t distance_bucket(std::size_t distance);

// Features f(e) for predicting the token at `position`: one-hot distance
// bucket for an existing entity, all zeros for the new-entity index.
std::array<double, kDistanceFeatures> distance_features(const EntityRegistry& registry, std::size_t e,
                                                        std::size_t position);

// Contiguous mention, token offsets inclusive.
struct MentionSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t entity = 0;
  friend bool operator==(const MentionSpan&, const MentionSpan&) = default;
  friend auto operator<=>(const MentionSpan&, const MentionSpan&) = default;
};

// Spans must not overlap. Entity ids are renumbered 1, 2, ... by first
// appearance; mentions longer than max_length keep their first max_length
// tokens.
std::vector<EntityAnnotation> annotate(std::size_t length, std::vector<MentionSpan> spans,
                                       std::size_t max_length = kDefaultMaxLength);
std::vector<MentionSpan> spans_of(const std::vector<EntityAnnotation>& annotations);

}  // namespace enlm::entity
