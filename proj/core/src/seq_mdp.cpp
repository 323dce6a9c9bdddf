#include "seqmatch/seq_mdp.hpp"

#include <algorithm>
#include <deque>

namespace seqmatch {

Vocab Vocab::from_tokens(std::vector<std::string> payload_tokens) {
  for (const auto& t : payload_tokens) {
    if (t.empty()) throw std::invalid_argument("Vocab: empty payload token name");
    if (std::count(payload_tokens.begin(), payload_tokens.end(), t) != 1) {
      throw std::invalid_argument("Vocab: duplicate payload token '" + t + "'");
    }
  }
  Vocab v;
  v.payload_ = static_cast<int>(payload_tokens.size());
  v.names_ = std::move(payload_tokens);
  v.names_.push_back("<eos>");
  v.names_.push_back("<bksp>");
  v.names_.push_back("<bos>");
  return v;
}

Vocab Vocab::with_payload_count(int count) {
  if (count < 0) throw std::invalid_argument("Vocab: negative payload count");
  std::vector<std::string> names;
  names.reserve(count);
  for (int i = 0; i < count; ++i) names.push_back("t" + std::to_string(i));
  return from_tokens(std::move(names));
}

const std::string& Vocab::token_name(TokenId t) const {
  if (t < 0 || t >= token_count()) throw std::out_of_range("Vocab::token_name: bad id");
  return names_[static_cast<std::size_t>(t)];
}

std::optional<TokenId> Vocab::find_payload(const std::string& name) const {
  for (int i = 0; i < payload_; ++i) {
    if (names_[static_cast<std::size_t>(i)] == name) return i;
  }
  return std::nullopt;
}

SeqState SeqState::from_payload(const Vocab& v, std::span<const TokenId> payload) {
  std::vector<TokenId> tokens;
  tokens.reserve(payload.size() + 1);
  tokens.push_back(v.bos());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    TokenId t = payload[i];
    if (t < 0 || t > v.eos()) {
      throw std::invalid_argument("SeqState::from_payload: token id out of payload range");
    }
    if (t == v.eos() && i + 1 != payload.size()) {
      throw std::invalid_argument("SeqState::from_payload: eos before end of payload");
    }
    tokens.push_back(t);
  }
  return SeqState(std::move(tokens));
}

SeqState SeqState::appended(TokenId t) const {
  std::vector<TokenId> tokens = tokens_;
  tokens.push_back(t);
  return SeqState(std::move(tokens));
}

SeqState SeqState::popped() const {
  std::vector<TokenId> tokens = tokens_;
  tokens.pop_back();
  return SeqState(std::move(tokens));
}

const SeqState& Trajectory::initial_state(const Vocab&) const {
  if (steps.empty()) throw std::logic_error("Trajectory::initial_state: empty trajectory");
  return steps.front().state;
}

const SeqState& Trajectory::final_state(const Vocab&) const {
  if (steps.empty()) throw std::logic_error("Trajectory::final_state: empty trajectory");
  return steps.back().next;
}

bool Trajectory::ends_terminal(const Vocab& v) const {
  return !steps.empty() && steps.back().next.terminal(v);
}

SeqState step(const Vocab& v, const SeqState& s, EditAction a) {
  if (!v.is_action(a.id)) throw std::invalid_argument("step: invalid action id");
  if (s.terminal(v)) return s;
  if (is_backspace(v, a)) {
    return s.payload_len() == 0 ? s : s.popped();
  }
  return s.appended(inserted_token(a));
}

std::vector<SeqState> apply_actions(const Vocab& v, const SeqState& s0,
                                    std::span<const EditAction> actions) {
  std::vector<SeqState> states;
  states.reserve(actions.size() + 1);
  states.push_back(s0);
  for (EditAction a : actions) states.push_back(step(v, states.back(), a));
  return states;
}

std::vector<SeqState> enumerate_states(const Vocab& v, int max_len, std::size_t state_budget) {
  if (max_len < 0) throw std::invalid_argument("enumerate_states: negative max_len");
  if (count_states(v, max_len) > state_budget) {
    throw BudgetExceededError("enumerate_states: would exceed state budget of " +
                              std::to_string(state_budget));
  }
  // Breadth-first by payload length; children visited in ascending token id
  // (payload tokens then eos) so the output is length-major lexicographic.
  std::vector<SeqState> out;
  std::deque<SeqState> frontier;
  frontier.push_back(SeqState::initial(v));
  while (!frontier.empty()) {
    SeqState s = std::move(frontier.front());
    frontier.pop_front();
    const bool terminal = s.terminal(v);
    const bool can_grow = !terminal && s.payload_len() < max_len;
    if (can_grow) {
      for (TokenId t = 0; t <= v.eos(); ++t) frontier.push_back(s.appended(t));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t count_states(const Vocab& v, int max_len) {
  // Non-terminal states are payload-token strings of length <= max_len, and
  // terminal states append eos to any of length <= max_len - 1.
  const std::size_t p = static_cast<std::size_t>(v.payload_count());
  std::size_t total = 0;
  std::size_t level = 1;
  for (int len = 0; len <= max_len; ++len) {
    total += level;              // non-terminal prefixes of this length
    if (len < max_len) {
      total += level;            // their eos-terminated versions (length len+1)
      if (p == 0) {
        level = 0;
      } else if (level > 2000000000ull / p) {
        return 2000000001ull;    // saturate well above any realistic budget
      } else {
        level *= p;
      }
    }
  }
  return total;
}

Trajectory trajectory_from_actions(const Vocab& v, const SeqState& s0,
                                   std::span<const EditAction> actions,
                                   TrajectorySource source) {
  Trajectory t;
  t.source = source;
  t.steps.reserve(actions.size());
  SeqState cur = s0;
  for (EditAction a : actions) {
    SeqState nxt = step(v, cur, a);
    t.steps.push_back(TrajectoryStep{cur, a, nxt, false});
    cur = std::move(nxt);
  }
  return t;
}

std::vector<EditAction> realized_actions(const Vocab& v, const Trajectory& t) {
  std::vector<EditAction> out;
  out.reserve(t.steps.size());
  for (const auto& s : t.steps) {
    if (s.next.size() == s.state.size() + 1) {
      out.push_back(insert_action(s.next.back()));
    } else if (s.next.size() + 1 == s.state.size()) {
      out.push_back(backspace_action(v));
    } else if (s.next == s.state) {
      // Self-loop: backspace at the root state or any action at a terminal.
      out.push_back(s.state.terminal(v) ? s.action : backspace_action(v));
    } else {
      throw std::logic_error("realized_actions: non-adjacent state transition");
    }
  }
  return out;
}

}  // namespace seqmatch
