#include "qlass/state.hpp"

#include "json.hpp"

#include "qlass/common.hpp"

namespace qlass {

HistoryState::HistoryState(std::string_view description) : description_(normalize_tokens(description)) {}

void HistoryState::append(std::string_view action, std::string_view observation) {
  steps_.push_back({normalize_tokens(action), normalize_tokens(observation)});
}

HistoryState HistoryState::extended(std::string_view action, std::string_view observation) const {
  HistoryState next = *this;
  next.append(action, observation);
  return next;
}

std::string HistoryState::key() const {
  nlohmann::json arr = nlohmann::json::array();
  arr.push_back(description_);
  for (const auto& s : steps_) {
    arr.push_back(s.action);
    arr.push_back(s.observation);
  }
  return arr.dump();
}

HistoryState HistoryState::from_key(std::string_view key) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(key);
  } catch (const nlohmann::json::exception& e) {
    throw DataValidationError("malformed state key: " + std::string(e.what()));
  }
  if (!arr.is_array() || arr.empty() || arr.size() % 2 == 0)
    throw DataValidationError("state key must be an odd-length array: " + std::string(key));
  for (const auto& v : arr)
    if (!v.is_string()) throw DataValidationError("state key entries must be strings");
  HistoryState s(arr[0].get<std::string>());
  for (std::size_t i = 1; i + 1 < arr.size(); i += 2)
    s.append(arr[i].get<std::string>(), arr[i + 1].get<std::string>());
  return s;
}

}  // namespace qlass
