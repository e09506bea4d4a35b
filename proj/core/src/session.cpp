#include "earcan/session.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "earcan/error.hpp"
#include "earcan/rng.hpp"

namespace earcan {

void SessionConfig::validate() const {
  if (theta_update < theta_accept)
    fail(Errc::config, "session: theta_update must be >= theta_accept");
  if (k_fail < 1) fail(Errc::config, "session: k_fail must be >= 1");
  if (ema_lambda <= 0.0 || ema_lambda > 1.0)
    fail(Errc::config, "session: ema_lambda must lie in (0, 1]");
  if (alpha_update < 0.0 || alpha_update > 1.0)
    fail(Errc::config, "session: alpha_update must lie in [0, 1]");
  if (latency_budget_ms <= 0.0) fail(Errc::config, "session: latency budget must be positive");
  if (window_seconds <= 0.0) fail(Errc::config, "session: window duration must be positive");
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::initial_login: return "initial_login";
    case Phase::authenticated: return "authenticated";
    case Phase::locked: return "locked";
  }
  return "?";
}

const char* verify_outcome_name(VerifyOutcome v) {
  switch (v) {
    case VerifyOutcome::accept: return "accept";
    case VerifyOutcome::reject_late: return "reject_late";
    case VerifyOutcome::reject_nonce: return "reject_nonce";
    case VerifyOutcome::reject_score: return "reject_score";
  }
  return "?";
}

SessionState::SessionState(const SessionConfig& config, Template initial_template)
    : config_(config), template_(std::move(initial_template)) {
  config_.validate();
}

void SessionState::append(double now_ms, const std::string& event, double score,
                          const std::string& decision) {
  log_.push_back({now_ms, phase_, event, score, decision});
}

void SessionState::initial_login(double enrollment_score, double now_ms) {
  if (phase_ != Phase::initial_login)
    fail(Errc::protocol, "initial_login called in phase " + std::string(phase_name(phase_)));
  if (enrollment_score >= config_.theta_update) {
    phase_ = Phase::authenticated;
    confidence_ = enrollment_score;
    consecutive_failures_ = 0;
    append(now_ms, "initial_login", enrollment_score, "accept");
  } else {
    append(now_ms, "initial_login", enrollment_score, "reject");
  }
}

void SessionState::window_step(double window_score, double now_ms) {
  if (phase_ != Phase::authenticated)
    fail(Errc::protocol, "window_step called in phase " + std::string(phase_name(phase_)));
  confidence_ = config_.ema_lambda * confidence_ + (1.0 - config_.ema_lambda) * window_score;
  if (window_score < config_.theta_accept) {
    ++consecutive_failures_;
    if (consecutive_failures_ >= config_.k_fail) {
      phase_ = Phase::locked;
      append(now_ms, "window", window_score, "fail_lock");
      return;
    }
    append(now_ms, "window", window_score, "fail");
  } else {
    consecutive_failures_ = 0;
    append(now_ms, "window", window_score, "pass");
  }
}

void SessionState::maybe_update_template(const Embedding& probe, double probe_score,
                                         double now_ms) {
  if (phase_ != Phase::authenticated)
    fail(Errc::protocol, "maybe_update_template called in phase " + std::string(phase_name(phase_)));
  if (probe_score < config_.theta_update) {
    append(now_ms, "template_update", probe_score, "skip");
    return;
  }
  if (probe.v.size() != template_.v.size())
    fail(Errc::dim_mismatch, "maybe_update_template: dimension mismatch");
  const double a = config_.alpha_update;
  double n2 = 0.0;
  std::vector<double> mixed(template_.v.size());
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    mixed[i] = (1.0 - a) * template_.v[i] + a * probe.v[i];
    n2 += mixed[i] * mixed[i];
  }
  const double norm = std::sqrt(n2);
  if (norm < 1e-6)
    fail(Errc::degenerate_template, "maybe_update_template: update cancels the template");
  for (auto& x : mixed) x /= norm;
  template_.v = std::move(mixed);
  template_.created_from = Template::CreatedFrom::playback_update;
  template_.n_enrolled += 1;
  append(now_ms, "template_update", probe_score, "apply");
}

void SessionState::relogin(double strict_score, double now_ms) {
  if (phase_ != Phase::locked)
    fail(Errc::protocol, "relogin called in phase " + std::string(phase_name(phase_)));
  if (strict_score >= config_.theta_update) {
    phase_ = Phase::authenticated;
    confidence_ = strict_score;
    consecutive_failures_ = 0;
    append(now_ms, "relogin", strict_score, "accept");
  } else {
    append(now_ms, "relogin", strict_score, "reject");
  }
}

std::string SessionState::trace_jsonl() const {
  std::string out;
  for (const auto& ev : log_) {
    nlohmann::ordered_json j;
    j["time_ms"] = ev.time_ms;
    j["phase"] = phase_name(ev.phase);
    j["event"] = ev.event;
    j["score"] = ev.score;
    j["decision"] = ev.decision;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Challenge issue_challenge(std::uint64_t seed, double now_ms, const SessionConfig& config) {
  Challenge c;
  c.nonce = Rng(seed).next_u64();
  c.issued_at_ms = now_ms;
  c.expires_at_ms = now_ms + config.latency_budget_ms;
  return c;
}

VerifyOutcome verify_response(Challenge& challenge, const ResponseMeta& meta,
                              const SessionConfig& config) {
  if (challenge.verified) fail(Errc::protocol, "verify_response: challenge already verified");
  challenge.verified = true;
  if (meta.latency_ms > config.latency_budget_ms) return VerifyOutcome::reject_late;
  if (meta.bound_nonce != challenge.nonce) return VerifyOutcome::reject_nonce;
  if (meta.match_score < config.theta_accept) return VerifyOutcome::reject_score;
  return VerifyOutcome::accept;
}

}  // namespace earcan
