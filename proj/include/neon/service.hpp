#pragma once

// JSON-lines request handling shared by the score, quota and serve commands.
//
// A request carries either a scene ({"profile", "context", "history"}) or
// precomputed {"need_scores", "way_probs"}; optional "id", "weights",
// "prerank", "supply", "order" and "boost" override the defaults. The reply
// holds q_need, q_way, ranking, way, quotas, guess_you_like and popup.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "neon/quota.hpp"
#include "neon/training.hpp"

namespace neon {

struct ServiceOptions {
  QuotaWeights weights;
  double boost = 1.0;
  double floor = kDefaultQuotaFloor;
};

class Service {
 public:
  /// Without a model only precomputed-score requests are accepted.
  Service(std::optional<NeonModel> model, std::optional<FeatureBundle> bundle,
          ServiceOptions options = {});

  /// Throws ValidationError or nn::NumericalError on bad requests.
  json handle(const json& request) const;

  /// One reply line (without newline); failures become error objects.
  std::string handle_line(std::string_view line, std::size_t line_no) const;

 private:
  std::optional<NeonModel> model_;
  std::optional<FeatureBundle> bundle_;
  ServiceOptions options_;
};

/// Parses a request scene. Context calendar fields may be omitted and are
/// then derived from the timestamp.
UserScene scene_from_json(const json& request);

json error_object(std::size_t line_no, std::string_view kind, std::string_view message);

struct StreamStats {
  std::size_t requests = 0;
  std::size_t errors = 0;
};

/// Reads request lines from `in` and writes one reply per line to `out` in
/// input order, handling requests on `workers` threads. Blank lines are
/// skipped. Output is flushed whenever the writer catches up with the input.
StreamStats serve_stream(std::istream& in, std::ostream& out, const Service& service,
                         std::size_t workers);

}  // namespace neon
