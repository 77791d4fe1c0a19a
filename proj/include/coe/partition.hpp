#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coe/trace.hpp"

namespace coe {

/// How answers are compared before deciding agreement.
enum class AnswerNormalization {
  exact,              ///< byte equality
  casefold_trim,      ///< trim ASCII whitespace, lowercase ASCII
  alphanum_casefold,  ///< keep ASCII letters and digits only, lowercase
};

enum class Group { vt, t, all };

std::string_view to_string(AnswerNormalization mode);
/// Accepts "exact", "casefold", "alnum" and the enumerator names.
std::optional<AnswerNormalization> parse_normalization(std::string_view name);
std::string_view to_string(Group group);

std::string normalize_answer(std::string_view answer, AnswerNormalization mode);

/// D_VT holds samples whose vision and blind answers disagree, D_T the rest.
struct Partition {
  std::vector<std::uint32_t> vt_ids;  ///< sorted
  std::vector<std::uint32_t> t_ids;   ///< sorted
  AnswerNormalization normalization = AnswerNormalization::casefold_trim;

  /// Group::vt or Group::t; throws std::out_of_range for unknown ids.
  Group group_of(std::uint32_t sample_id) const;
};

Partition partition_by_agreement(
    const RecordSource& trace,
    AnswerNormalization mode = AnswerNormalization::casefold_trim);

}  // namespace coe
