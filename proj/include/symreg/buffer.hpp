#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "symreg/canonical.hpp"
#include "symreg/expr.hpp"
#include "symreg/fit.hpp"

namespace symreg {

class BufferError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InsertOutcome { Inserted, Improved, DuplicateWorse };

struct BufferEntry {
  std::string canonical_text;
  std::optional<double> score;  // MAPE on the observed table; unset entries are stored but unranked
  std::array<double, kMaxParams> params{};
  int iteration_found = 0;
  std::uint64_t sequence = 0;
};

/// Ranked store of explored skeletons, deduplicated by canonical text.
/// Single-owner per run; snapshots make the state transferable.
class ExperienceBuffer {
 public:
  /// Dedup on the canonical skeleton; a colliding entry survives only if its
  /// score is strictly lower. The original discovery sequence is kept so tie
  /// breaks stay stable.
  InsertOutcome insert(const Expr& expr, std::span<const std::string> var_names,
                       const FitResult& fit, int iteration) {
    const CanonicalForm canon = canonicalize(expr);
    BufferEntry incoming;
    incoming.canonical_text = to_text(canon.expr, var_names);
    incoming.score = fit.metrics.mape;
    incoming.params = relabel_param_values(canon.param_map, fit.params);
    incoming.iteration_found = iteration;

    const auto it = index_.find(incoming.canonical_text);
    if (it == index_.end()) {
      incoming.sequence = next_sequence_++;
      index_.emplace(incoming.canonical_text, entries_.size());
      entries_.push_back(std::move(incoming));
      return InsertOutcome::Inserted;
    }
    BufferEntry& existing = entries_[it->second];
    const bool improves =
        incoming.score && (!existing.score || *incoming.score < *existing.score);
    if (!improves) return InsertOutcome::DuplicateWorse;
    existing.score = incoming.score;
    existing.params = incoming.params;
    return InsertOutcome::Improved;
  }

  /// Up to k scored entries, ascending MAPE, ties to the earlier discovery.
  std::vector<BufferEntry> topk(std::size_t k) const {
    std::vector<BufferEntry> scored;
    for (const auto& e : entries_)
      if (e.score) scored.push_back(e);
    std::sort(scored.begin(), scored.end(), [](const BufferEntry& a, const BufferEntry& b) {
      if (*a.score != *b.score) return *a.score < *b.score;
      return a.sequence < b.sequence;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
  }

  std::optional<BufferEntry> best() const {
    auto top = topk(1);
    if (top.empty()) return std::nullopt;
    return top.front();
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<BufferEntry>& entries() const { return entries_; }

  bool contains(const std::string& canonical) const { return index_.count(canonical) > 0; }

  /// One JSON object per line; empty buffer serializes to an empty string.
  std::string snapshot() const {
    std::string out;
    for (const auto& e : entries_) {
      nlohmann::json j;
      j["canonical_text"] = e.canonical_text;
      if (e.score)
        j["score"] = *e.score;
      else
        j["score"] = nullptr;
      j["params"] = e.params;
      j["iteration_found"] = e.iteration_found;
      j["sequence"] = e.sequence;
      out += j.dump();
      out += '\n';
    }
    return out;
  }

  static ExperienceBuffer restore(std::string_view text) {
    ExperienceBuffer buffer;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      const std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (line.empty()) continue;
      BufferEntry e;
      try {
        const nlohmann::json j = nlohmann::json::parse(line);
        e.canonical_text = j.at("canonical_text").get<std::string>();
        if (!j.at("score").is_null()) e.score = j.at("score").get<double>();
        const auto& params = j.at("params");
        if (params.size() != static_cast<std::size_t>(kMaxParams))
          throw BufferError("bad params length");
        for (std::size_t i = 0; i < e.params.size(); ++i) e.params[i] = params[i].get<double>();
        e.iteration_found = j.at("iteration_found").get<int>();
        e.sequence = j.at("sequence").get<std::uint64_t>();
      } catch (const BufferError&) {
        throw BufferError("snapshot line " + std::to_string(line_no) + ": bad params length");
      } catch (const std::exception& ex) {
        throw BufferError("snapshot line " + std::to_string(line_no) + ": " + ex.what());
      }
      if (buffer.index_.count(e.canonical_text))
        throw BufferError("snapshot line " + std::to_string(line_no) + ": duplicate entry");
      buffer.index_.emplace(e.canonical_text, buffer.entries_.size());
      buffer.next_sequence_ = std::max(buffer.next_sequence_, e.sequence + 1);
      buffer.entries_.push_back(std::move(e));
    }
    return buffer;
  }

 private:
  std::vector<BufferEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t next_sequence_ = 0;
};

}  // namespace symreg
