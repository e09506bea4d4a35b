#pragma once

#include <stdexcept>
#include <string>

namespace earcan {

// Error categories used across the library. Tests match on the code, not
// on message text.
enum class Errc {
  config,            // invalid configuration or degenerate parameter range
  format,            // malformed file (WAV header, manifest, checkpoint)
  rate_mismatch,     // signals with different sample rates
  empty_input,       // operation requires non-empty input
  nfft_too_small,    // transform length shorter than the signal
  spec_mismatch,     // signal does not match the sweep spec it claims
  sounding_failed,   // no deconvolution peak above the noise floor
  stratification,    // dataset split cannot keep every label in both parts
  short_input,       // fewer frames than the network's receptive field
  label_range,       // class label out of range
  diverged,          // training loss became non-finite
  degenerate_template, // aggregated embedding has (near) zero norm
  dim_mismatch,      // vector dimensions disagree
  protocol,          // session state machine misuse
  domain,            // argument outside a function's domain
  no_history,        // replay requested with nothing recorded
  patch_too_hot,     // watermark clipped more than the allowed fraction
  optimization_failed, // non-finite gradient during patch optimization
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace earcan
