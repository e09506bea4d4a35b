#pragma once

#include <string>
#include <vector>

#include "earcan/embedding.hpp"

namespace earcan {

struct Template {
  enum class CreatedFrom { chirp_enrollment, playback_update };
  std::vector<double> v;  // unit norm
  std::size_t n_enrolled = 0;
  CreatedFrom created_from = CreatedFrom::chirp_enrollment;
};

// Mean of the embeddings, renormalized. Anti-parallel inputs that cancel
// to (near) zero raise degenerate_template.
Template make_template(const std::vector<Embedding>& embeddings,
                       Template::CreatedFrom origin = Template::CreatedFrom::chirp_enrollment);

// Cosine similarity; both sides are unit norm so this is a plain dot.
double score(const Template& tmpl, const Embedding& probe);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Threshold sweep over all distinct scores with linear interpolation at
// the FAR/FRR crossing. Accept convention: score >= threshold accepts.
EerResult eer(const std::vector<double>& genuine, const std::vector<double>& imposter);

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

// One point per distinct score plus both saturated endpoints; FAR is
// non-increasing and FRR non-decreasing along the sweep.
std::vector<RocPoint> roc_points(const std::vector<double>& genuine,
                                 const std::vector<double>& imposter);

std::string roc_to_csv(const std::vector<RocPoint>& points);

}  // namespace earcan
