#include <condition_variable>
#include <deque>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "neon/service.hpp"

namespace neon {

namespace {

Simplex simplex_field(const json& request, const char* field, const Simplex& fallback) {
  auto it = request.find(field);
  if (it == request.end()) return fallback;
  Simplex s{};
  try {
    s = it->get<Simplex>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("field '") + field + "' must be an array of 10 numbers");
  }
  if (!is_simplex(s)) throw ValidationError(std::string("field '") + field + "' is not a simplex");
  return s;
}

template <std::size_t N>
std::array<double, N> number_array(const json& request, const char* field) {
  try {
    return request.at(field).get<std::array<double, N>>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("field '") + field + "' must be an array of " +
                          std::to_string(N) + " numbers");
  }
}

json need_names(const std::array<NeedCategory, kNeedCount>& ranking) {
  json out = json::array();
  for (NeedCategory n : ranking) out.push_back(to_string(n));
  return out;
}

}  // namespace

UserScene scene_from_json(const json& request) {
  if (!request.contains("profile") || !request.contains("context"))
    throw ValidationError("scene request needs 'profile' and 'context'");
  UserScene scene;
  try {
    scene.profile = request.at("profile").get<UserProfile>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("profile: ") + e.what());
  }
  validate_profile(scene.profile);

  json ctx = request.at("context");
  if (!ctx.is_object()) throw ValidationError("context must be a JSON object");
  if (!ctx.contains("hour") && !ctx.contains("day_of_week") && !ctx.contains("time_period")) {
    if (!ctx.contains("timestamp") || !ctx.at("timestamp").is_number_integer())
      throw ValidationError("missing field 'timestamp'");
    SpatioTemporalContext probe;
    probe.timestamp = ctx.at("timestamp").get<std::int64_t>();
    probe = derive_calendar_fields(probe);
    ctx["hour"] = probe.hour;
    ctx["day_of_week"] = probe.day_of_week;
    ctx["time_period"] = kTimePeriodLabels[static_cast<std::size_t>(probe.time_period)];
  }
  scene.context = ctx.get<SpatioTemporalContext>();

  if (auto it = request.find("history"); it != request.end()) {
    if (!it->is_array()) throw ValidationError("history must be an array of records");
    for (const auto& r : *it) {
      PurchaseRecord rec = r.get<PurchaseRecord>();
      if (rec.context.timestamp >= scene.context.timestamp) continue;
      scene.history.push_back(std::move(rec));
    }
    std::stable_sort(scene.history.begin(), scene.history.end(), [](const auto& a, const auto& b) {
      return a.context.timestamp < b.context.timestamp;
    });
  }
  return scene;
}

json error_object(std::size_t line_no, std::string_view kind, std::string_view message) {
  return json{{"error", {{"line", line_no}, {"kind", kind}, {"message", message}}}};
}

Service::Service(std::optional<NeonModel> model, std::optional<FeatureBundle> bundle,
                 ServiceOptions options)
    : model_(std::move(model)), bundle_(std::move(bundle)), options_(options) {
  if (model_ && !bundle_) throw ValidationError("a model needs its feature bundle");
  options_.weights.validate();
}

json Service::handle(const json& request) const {
  if (!request.is_object()) throw ValidationError("request must be a JSON object");

  PredictionScores scores;
  QuotaInputs defaults;
  defaults.prerank = uniform_simplex();
  defaults.supply = uniform_simplex();
  defaults.order = bundle_ ? bundle_->tables.global() : uniform_simplex();

  if (request.contains("need_scores")) {
    const auto need = number_array<kNeedCount>(request, "need_scores");
    std::array<double, kWayCount> way{0.0, 0.0};
    if (request.contains("way_scores")) way = number_array<kWayCount>(request, "way_scores");
    scores = make_scores(need, way);
    if (request.contains("way_probs")) {
      const auto wp = number_array<kWayCount>(request, "way_probs");
      if (!(wp[0] >= 0.0 && wp[1] >= 0.0 && std::abs(wp[0] + wp[1] - 1.0) <= 1e-9))
        throw ValidationError("field 'way_probs' is not a simplex");
      scores.way_probs = wp;
    }
  } else {
    if (!model_) throw ValidationError("scene requests need a model; pass need_scores instead");
    const UserScene scene = scene_from_json(request);
    scores = model_->predict_one(encode_scene(scene, *bundle_));
    defaults = default_quota_inputs(scene.profile, bundle_->tables, scores.need_scores);
  }

  QuotaInputs in;
  in.need_scores = scores.need_scores;
  in.prerank = simplex_field(request, "prerank", defaults.prerank);
  in.supply = simplex_field(request, "supply", defaults.supply);
  in.order = simplex_field(request, "order", defaults.order);
  in.weights = request.contains("weights") ? quota_weights_from_json(request.at("weights"))
                                           : options_.weights;
  double boost = options_.boost;
  if (auto it = request.find("boost"); it != request.end()) {
    if (!it->is_number()) throw ValidationError("field 'boost' must be a number");
    boost = it->get<double>();
  }
  const Simplex quotas = homepage_quotas(in, options_.floor);

  json reply = json::object();
  if (auto it = request.find("id"); it != request.end()) reply["id"] = *it;
  reply["q_need"] = scores.need_probs;
  reply["q_way"] = scores.way_probs;
  reply["ranking"] = need_names(rank_needs(scores));
  reply["way"] = to_string(predict_way(scores));
  reply["quotas"] = quotas;
  reply["guess_you_like"] = guess_you_like_quotas(quotas, scores.way_probs, boost);
  reply["popup"] = to_string(popup_category(scores.need_scores));
  return reply;
}

std::string Service::handle_line(std::string_view line, std::size_t line_no) const {
  json request;
  try {
    request = json::parse(line);
  } catch (const json::parse_error& e) {
    return error_object(line_no, "parse", e.what()).dump();
  }
  try {
    return handle(request).dump();
  } catch (const nn::NumericalError& e) {
    return error_object(line_no, "numerical", e.what()).dump();
  } catch (const std::exception& e) {
    json err = error_object(line_no, "validation", e.what());
    if (request.is_object() && request.contains("id")) err["id"] = request.at("id");
    return err.dump();
  }
}

StreamStats serve_stream(std::istream& in, std::ostream& out, const Service& service,
                         std::size_t workers) {
  workers = std::max<std::size_t>(workers, 1);
  constexpr std::size_t kMaxInFlight = 1024;

  std::mutex mu;
  std::condition_variable work_ready, result_ready, space_ready;
  std::deque<std::pair<std::size_t, std::pair<std::size_t, std::string>>> jobs;
  std::map<std::size_t, std::string> results;
  std::size_t submitted = 0;
  std::size_t written = 0;
  bool input_done = false;
  StreamStats stats;

  auto worker = [&] {
    for (;;) {
      std::pair<std::size_t, std::pair<std::size_t, std::string>> job;
      {
        std::unique_lock lock(mu);
        work_ready.wait(lock, [&] { return !jobs.empty() || input_done; });
        if (jobs.empty()) return;
        job = std::move(jobs.front());
        jobs.pop_front();
      }
      std::string reply = service.handle_line(job.second.second, job.second.first);
      {
        std::lock_guard lock(mu);
        results.emplace(job.first, std::move(reply));
      }
      result_ready.notify_all();
    }
  };

  auto writer = [&] {
    std::size_t next = 0;
    for (;;) {
      std::string line;
      bool more_ready = false;
      {
        std::unique_lock lock(mu);
        result_ready.wait(lock, [&] {
          return results.count(next) > 0 || (input_done && next == submitted);
        });
        if (results.count(next) == 0) return;
        auto node = results.extract(next);
        line = std::move(node.mapped());
        more_ready = results.count(next + 1) > 0;
        ++written;
      }
      space_ready.notify_one();
      if (line.rfind("{\"error\"", 0) == 0) {
        std::lock_guard lock(mu);
        ++stats.errors;
      }
      out << line << '\n';
      if (!more_ready) out.flush();
      ++next;
    }
  };

  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
  std::thread writer_thread(writer);

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::unique_lock lock(mu);
    space_ready.wait(lock, [&] { return submitted - written < kMaxInFlight; });
    jobs.emplace_back(submitted++, std::make_pair(line_no, std::move(line)));
    lock.unlock();
    work_ready.notify_one();
  }
  {
    std::lock_guard lock(mu);
    input_done = true;
    stats.requests = submitted;
  }
  work_ready.notify_all();
  result_ready.notify_all();
  for (auto& t : pool) t.join();
  result_ready.notify_all();
  writer_thread.join();
  out.flush();
  return stats;
}

}  // namespace neon
