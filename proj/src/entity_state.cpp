#include "entitynlm/entity_state.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "entitynlm/error.hpp"

namespace enlm::entity {

std::size_t EntityRegistry::last_mention(std::size_t e) const {
  if (e < 1 || e > size()) {
    throw ContractError("registry: entity " + std::to_string(e) + " has not been mentioned (K=" +
                        std::to_string(size()) + ")");
  }
  return last_mention_[e - 1];
}

void EntityRegistry::record(std::size_t e, std::size_t position) {
  if (e == new_entity_index()) {
    last_mention_.push_back(position);
  } else if (e >= 1 && e <= size()) {
    last_mention_[e - 1] = position;
  } else {
    throw ContractError("registry: entity " + std::to_string(e) + " outside {1.." +
                        std::to_string(new_entity_index()) + "}");
  }
  current_ = e;
}

StateMachine::StateMachine(std::size_t max_length) : max_length_(max_length) {
  if (max_length_ < 1) throw ConfigError("state machine: max mention length must be >= 1");
}

std::vector<std::size_t> StateMachine::admissible_entities() const {
  if (!at_choice_point()) {
    throw ContractError("admissible_entities: called mid-mention at position " + std::to_string(position_) +
                        " (remaining length " + std::to_string(prev_.l) + ")");
  }
  std::vector<std::size_t> out(registry_.new_entity_index());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i + 1;
  return out;
}

EntityAnnotation StateMachine::forced_continuation() const {
  if (at_choice_point()) {
    throw ContractError("forced_continuation: position " + std::to_string(position_) + " is a choice point");
  }
  return {prev_.r, prev_.e, prev_.l - 1};
}

void StateMachine::check(const EntityAnnotation& choice) const {
  const std::string where = " at position " + std::to_string(position_);
  if (!at_choice_point()) {
    if (choice != forced_continuation()) {
      throw ContractError("forced continuation violated" + where + ": expected (r=1, e=" +
                          std::to_string(prev_.e) + ", l=" + std::to_string(prev_.l - 1) + ")");
    }
  } else if (choice.r == 0) {
    if (choice.l != 1 || choice.e != kNoEntity) {
      throw ContractError("non-mention token must have l=1 and no entity" + where);
    }
  } else if (choice.r == 1) {
    if (choice.e < 1 || choice.e > registry_.new_entity_index()) {
      throw ContractError("inadmissible entity " + std::to_string(choice.e) + where + " (admissible 1.." +
                          std::to_string(registry_.new_entity_index()) + ")");
    }
    if (choice.l < 1 || choice.l > max_length_) {
      throw ContractError("mention length " + std::to_string(choice.l) + " outside [1, " +
                          std::to_string(max_length_) + "]" + where);
    }
  } else {
    throw ContractError("r must be 0 or 1" + where);
  }
}

void StateMachine::advance(const EntityAnnotation& choice) {
  check(choice);
  if (choice.r == 1) registry_.record(choice.e, position_);
  prev_ = choice;
  ++position_;
}

std::size_t distance_bucket(std::size_t distance) {
  if (distance < 1) throw ContractError("distance_bucket: distance must be >= 1");
  std::size_t bucket = 0;
  std::size_t upper = 1;  // bucket b covers [2^b, 2^(b+1) - 1]
  while (distance > upper && bucket + 1 < kDistanceFeatures) {
    ++bucket;
    upper = upper * 2 + 1;
  }
  return bucket;
}

std::array<double, kDistanceFeatures> distance_features(const EntityRegistry& registry, std::size_t e,
                                                        std::size_t position) {
  std::array<double, kDistanceFeatures> f{};
  if (e == registry.new_entity_index()) return f;
  if (e < 1 || e > registry.size()) {
    throw ContractError("distance_features: entity " + std::to_string(e) + " is not admissible");
  }
  const std::size_t last = registry.last_mention(e);
  if (position <= last) {
    throw ContractError("distance_features: position " + std::to_string(position) +
                        " is not after the last mention " + std::to_string(last));
  }
  f[distance_bucket(position - last)] = 1.0;
  return f;
}

std::vector<EntityAnnotation> annotate(std::size_t length, std::vector<MentionSpan> spans,
                                       std::size_t max_length) {
  std::sort(spans.begin(), spans.end());
  std::vector<EntityAnnotation> out(length);
  std::map<std::size_t, std::size_t> renumber;
  std::size_t covered_until = 0;
  bool any = false;
  for (const MentionSpan& s : spans) {
    if (s.end < s.start || s.end >= length) {
      throw ContractError("annotate: span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                          "] outside document of length " + std::to_string(length));
    }
    if (any && s.start <= covered_until) {
      throw ContractError("annotate: overlapping mention at token " + std::to_string(s.start));
    }
    any = true;
    covered_until = s.end;
    const auto [it, inserted] = renumber.emplace(s.entity, renumber.size() + 1);
    const std::size_t len = std::min(s.end - s.start + 1, max_length);
    for (std::size_t k = 0; k < len; ++k) out[s.start + k] = EntityAnnotation::mention(it->second, len - k);
  }
  return out;
}

std::vector<MentionSpan> spans_of(const std::vector<EntityAnnotation>& annotations) {
  std::vector<MentionSpan> out;
  for (std::size_t t = 0; t < annotations.size(); ++t) {
    const EntityAnnotation& a = annotations[t];
    if (a.r != 1) continue;
    if (t == 0 || annotations[t - 1].l == 1) out.push_back({t, t, a.e});
    out.back().end = t;
  }
  return out;
}

}  // namespace enlm::entity
