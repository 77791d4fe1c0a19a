#include "coe/partition.hpp"

#include <algorithm>
#include <stdexcept>

namespace coe {

std::string_view to_string(AnswerNormalization mode) {
  switch (mode) {
    case AnswerNormalization::exact:
      return "exact";
    case AnswerNormalization::casefold_trim:
      return "casefold";
    case AnswerNormalization::alphanum_casefold:
      return "alnum";
  }
  return "?";
}

std::optional<AnswerNormalization> parse_normalization(std::string_view name) {
  if (name == "exact") return AnswerNormalization::exact;
  if (name == "casefold" || name == "casefold_trim")
    return AnswerNormalization::casefold_trim;
  if (name == "alnum" || name == "alphanum_casefold")
    return AnswerNormalization::alphanum_casefold;
  return std::nullopt;
}

std::string_view to_string(Group group) {
  switch (group) {
    case Group::vt:
      return "VT";
    case Group::t:
      return "T";
    case Group::all:
      return "ALL";
  }
  return "?";
}

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}
bool is_alnum(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z');
}
char lower(char c) { return (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c; }

}  // namespace

std::string normalize_answer(std::string_view answer, AnswerNormalization mode) {
  switch (mode) {
    case AnswerNormalization::exact:
      return std::string(answer);
    case AnswerNormalization::casefold_trim: {
      while (!answer.empty() && is_space(answer.front())) answer.remove_prefix(1);
      while (!answer.empty() && is_space(answer.back())) answer.remove_suffix(1);
      std::string out(answer);
      std::transform(out.begin(), out.end(), out.begin(), lower);
      return out;
    }
    case AnswerNormalization::alphanum_casefold: {
      std::string out;
      for (char c : answer)
        if (is_alnum(c)) out.push_back(lower(c));
      return out;
    }
  }
  return std::string(answer);
}

Group Partition::group_of(std::uint32_t sample_id) const {
  if (std::binary_search(vt_ids.begin(), vt_ids.end(), sample_id))
    return Group::vt;
  if (std::binary_search(t_ids.begin(), t_ids.end(), sample_id)) return Group::t;
  throw std::out_of_range("sample_id " + std::to_string(sample_id) +
                          " is not in the partition");
}

Partition partition_by_agreement(const RecordSource& trace,
                                 AnswerNormalization mode) {
  Partition p;
  p.normalization = mode;
  SampleRecord scratch;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace.record(i, scratch);
    const bool agree = normalize_answer(r.pred_vis, mode) ==
                       normalize_answer(r.pred_blind, mode);
    (agree ? p.t_ids : p.vt_ids).push_back(r.sample_id);
  }
  std::sort(p.vt_ids.begin(), p.vt_ids.end());
  std::sort(p.t_ids.begin(), p.t_ids.end());
  return p;
}

}  // namespace coe
