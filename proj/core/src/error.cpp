#include "earcan/error.hpp"

namespace earcan {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::config: return "config error";
    case Errc::format: return "format error";
    case Errc::rate_mismatch: return "rate mismatch";
    case Errc::empty_input: return "empty input";
    case Errc::nfft_too_small: return "nfft too small";
    case Errc::spec_mismatch: return "spec mismatch";
    case Errc::sounding_failed: return "sounding failed";
    case Errc::stratification: return "stratification error";
    case Errc::short_input: return "input too short";
    case Errc::label_range: return "label out of range";
    case Errc::diverged: return "training diverged";
    case Errc::degenerate_template: return "degenerate template";
    case Errc::dim_mismatch: return "dimension mismatch";
    case Errc::protocol: return "protocol error";
    case Errc::domain: return "domain error";
    case Errc::no_history: return "no recorded history";
    case Errc::patch_too_hot: return "patch too hot";
    case Errc::optimization_failed: return "optimization failed";
  }
  return "error";
}

}  // namespace earcan
