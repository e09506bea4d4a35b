#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "earcan/matcher.hpp"

namespace earcan {

struct SessionConfig {
  double window_seconds = 3.0;
  double theta_accept = 0.5;
  double theta_update = 0.7;   // strict gate; must be >= theta_accept
  double ema_lambda = 0.7;     // confidence smoothing; 1.0 freezes it
  std::size_t k_fail = 3;
  double alpha_update = 0.05;  // template EMA weight
  double latency_budget_ms = 200.0;

  void validate() const;
};

enum class Phase { initial_login, authenticated, locked };

const char* phase_name(Phase p);

struct SessionEvent {
  double time_ms = 0.0;
  Phase phase = Phase::initial_login;
  std::string event;
  double score = 0.0;
  std::string decision;
};

// Single-owner state machine: initial login -> continuous windows with a
// consecutive-failure counter -> lock -> strict re-login. The event log is
// append-only and is the auditable surface for the safety invariants.
class SessionState {
 public:
  SessionState(const SessionConfig& config, Template initial_template);

  Phase phase() const { return phase_; }
  double confidence() const { return confidence_; }
  std::size_t consecutive_failures() const { return consecutive_failures_; }
  const Template& current_template() const { return template_; }
  const std::vector<SessionEvent>& event_log() const { return log_; }
  const SessionConfig& config() const { return config_; }

  // Strict one-time gate: score >= theta_update authenticates.
  void initial_login(double enrollment_score, double now_ms = 0.0);

  // One continuous-authentication window. Updates the confidence EMA and
  // the failure counter; k_fail consecutive sub-threshold windows lock.
  void window_step(double window_score, double now_ms = 0.0);

  // Gated template EMA: only scores >= theta_update may update.
  void maybe_update_template(const Embedding& probe, double probe_score, double now_ms = 0.0);

  // Same strict rule as initial_login, from the locked phase.
  void relogin(double strict_score, double now_ms = 0.0);

  // JSON lines, one event per line (time_ms, phase, event, score, decision).
  std::string trace_jsonl() const;

 private:
  void append(double now_ms, const std::string& event, double score, const std::string& decision);

  SessionConfig config_;
  Phase phase_ = Phase::initial_login;
  double confidence_ = 0.0;
  std::size_t consecutive_failures_ = 0;
  Template template_;
  std::vector<SessionEvent> log_;
};

struct Challenge {
  std::uint64_t nonce = 0;
  double issued_at_ms = 0.0;
  double expires_at_ms = 0.0;
  bool verified = false;
};

Challenge issue_challenge(std::uint64_t seed, double now_ms, const SessionConfig& config);

struct ResponseMeta {
  std::uint64_t bound_nonce = 0;  // nonce the response was generated against
  double latency_ms = 0.0;
  double match_score = 0.0;
};

enum class VerifyOutcome { accept, reject_late, reject_nonce, reject_score };

const char* verify_outcome_name(VerifyOutcome v);

// Challenge-response activeness check: rejects late responses, responses
// bound to a different nonce (replay), and sub-threshold matches. Each
// challenge verifies exactly once.
VerifyOutcome verify_response(Challenge& challenge, const ResponseMeta& meta,
                              const SessionConfig& config);

}  // namespace earcan
