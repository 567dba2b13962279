#pragma once

#include <optional>
#include <string>

namespace relforge {

// A free-form (subject, relation phrase, object) produced by the LLM. The
// entity indices are filled in by linking against the document.
struct ProposalTriple {
  std::string subject_surface;
  std::string relation_phrase;
  std::string object_surface;
  std::string doc_title;
  int round = 0;
  int line_index = 0;
  std::optional<int> subject_idx;
  std::optional<int> object_idx;

  bool linked() const { return subject_idx.has_value() && object_idx.has_value(); }

  friend bool operator==(const ProposalTriple&, const ProposalTriple&) = default;
};

}  // namespace relforge
