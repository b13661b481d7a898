#include "manic/teacher.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <numeric>
#include <sstream>

#include <httplib.h>

#include "manic/binary_io.hpp"
#include "manic/error.hpp"
#include "manic/image_io.hpp"

namespace manic {

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

namespace {

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const nlohmann::json& j) {
  auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string status_name(CandidateStatus s) { return s == CandidateStatus::kPending ? "pending" : "ranked"; }

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); });
}

}  // namespace

nlohmann::json CandidateBundle::to_json() const {
  nlohmann::json plan_json = nlohmann::json::array();
  for (const auto& u : plan.actions) plan_json.push_back(vec_json(u));
  nlohmann::json trace_json = nlohmann::json::array();
  for (const auto& v : trace) trace_json.push_back(vec_json(v));
  return {{"id", id},
          {"plan", plan_json},
          {"v0", vec_json(v0)},
          {"trace", trace_json},
          {"frame_count", plan.horizon()},
          {"created_at", created_at_ms},
          {"status", status_name(status)}};
}

CandidateBundle CandidateBundle::from_json(const nlohmann::json& j) {
  CandidateBundle b;
  b.id = j.at("id").get<std::string>();
  for (const auto& u : j.at("plan")) b.plan.actions.push_back(json_vec(u));
  b.v0 = json_vec(j.at("v0"));
  for (const auto& v : j.at("trace")) b.trace.push_back(json_vec(v));
  b.created_at_ms = j.value("created_at", std::int64_t{0});
  b.status = j.value("status", std::string("pending")) == "ranked" ? CandidateStatus::kRanked : CandidateStatus::kPending;
  return b;
}

nlohmann::json CandidateBundle::summary() const {
  return {{"id", id},
          {"horizon", plan.horizon()},
          {"frame_count", plan.horizon()},
          {"created_at", created_at_ms},
          {"status", status_name(status)}};
}

std::string candidate_id(const Plan& plan, const Belief& v0) {
  io::Fnv1a h;
  h.update_value(static_cast<std::uint64_t>(plan.horizon()));
  for (const auto& u : plan.actions) {
    h.update_value(static_cast<std::uint64_t>(u.size()));
    for (Eigen::Index i = 0; i < u.size(); ++i) h.update_value(u[i]);
  }
  h.update_value(static_cast<std::uint64_t>(v0.size()));
  for (Eigen::Index i = 0; i < v0.size(); ++i) h.update_value(v0[i]);
  return io::hex64(h.digest());
}

std::size_t plan_distance(const Plan& a, const Plan& b) {
  require(a.horizon() == b.horizon(), ErrorKind::kShape, "plans differ in horizon");
  std::size_t d = 0;
  for (std::size_t k = 0; k < a.horizon(); ++k)
    if (a.actions[k] != b.actions[k]) ++d;
  return d;
}

std::vector<std::size_t> select_diverse(const std::vector<Plan>& plans, std::size_t first, std::size_t n,
                                        std::uint64_t seed) {
  require(n >= 2, ErrorKind::kPrecondition, "candidate generation needs n >= 2");
  require(first < plans.size(), ErrorKind::kPrecondition, "first plan index out of range");
  std::vector<std::size_t> order(plans.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> chosen{first};
  std::vector<std::size_t> nearest(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) nearest[i] = plan_distance(plans[i], plans[first]);
  while (chosen.size() < n) {
    std::size_t best = plans.size();
    for (std::size_t i : order) {
      if (nearest[i] == 0) continue;
      if (best == plans.size() || nearest[i] > nearest[best]) best = i;
    }
    if (best == plans.size()) break;
    chosen.push_back(best);
    for (std::size_t i = 0; i < plans.size(); ++i) nearest[i] = std::min(nearest[i], plan_distance(plans[i], plans[best]));
  }
  return chosen;
}

std::vector<CandidateBundle> generate_candidates(const PlanPool& pool, const LearningSystem& ls, const Belief& v0,
                                                 std::size_t n, std::uint64_t diversity_seed,
                                                 std::int64_t created_at_ms) {
  std::vector<CandidateBundle> out;
  for (std::size_t i : select_diverse(pool.plans(), pool.elite_index(), n, diversity_seed)) {
    CandidateBundle b;
    b.plan = pool.plan(i);
    b.v0 = v0;
    b.id = candidate_id(b.plan, v0);
    b.trace = ls.rollout(v0, b.plan);
    for (const auto& v : b.trace) b.frames.push_back(ls.decode_frame(v));
    b.created_at_ms = created_at_ms;
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<CandidateBundle> generate_candidates(const ManicAgent& agent, std::size_t n, std::uint64_t diversity_seed,
                                                 std::int64_t created_at_ms) {
  require(agent.step_count() > 0, ErrorKind::kPrecondition, "agent has not observed anything yet");
  return generate_candidates(agent.pool(), agent.learning_system(), agent.last_step().belief, n, diversity_seed,
                             created_at_ms);
}

std::vector<std::string> rank_candidates(const std::vector<CandidateBundle>& bundles,
                                         const std::function<double(const CandidateBundle&)>& utility) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < bundles.size(); ++i) scored.emplace_back(utility(bundles[i]), i);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> ids;
  for (const auto& [u, i] : scored) ids.push_back(bundles[i].id);
  return ids;
}

PreferenceStore::PreferenceStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_ / "candidates");
  replay();
}

void PreferenceStore::replay() {
  std::ifstream in(dir_ / "preferences.jsonl");
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json event;
    try {
      event = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, "preferences.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string type = event.at("type").get<std::string>();
    if (type == "candidate") {
      CandidateBundle b = CandidateBundle::from_json(event.at("bundle"));
      b.status = CandidateStatus::kPending;
      if (candidates_.emplace(b.id, b).second) order_.push_back(b.id);
    } else if (type == "ranking") {
      PreferenceRecord r = PreferenceRecord::from_json(event.at("record"));
      for (const auto& id : r.ordering) {
        auto it = candidates_.find(id);
        require(it != candidates_.end(), ErrorKind::kFormat, "ranking refers to unknown candidate " + id);
        it->second.status = CandidateStatus::kRanked;
      }
      records_.push_back(std::move(r));
    } else {
      throw Error(ErrorKind::kFormat, "unknown event type " + type);
    }
  }
}

void PreferenceStore::append_event(const nlohmann::json& event) {
  std::ofstream out(dir_ / "preferences.jsonl", std::ios::app);
  require(out.good(), ErrorKind::kIo, "cannot append to preferences.jsonl");
  out << event.dump() << '\n';
  out.flush();
  require(out.good(), ErrorKind::kIo, "append to preferences.jsonl failed");
}

std::size_t PreferenceStore::add_candidates(const std::vector<CandidateBundle>& bundles) {
  std::unique_lock lock(mutex_);
  std::size_t added = 0;
  for (const auto& b : bundles) {
    require(b.id == candidate_id(b.plan, b.v0), ErrorKind::kPrecondition, "bundle id does not match its content");
    require(b.frames.size() == b.plan.horizon(), ErrorKind::kShape, "bundle needs one frame per plan step");
    if (candidates_.count(b.id)) continue;
    const auto cdir = dir_ / "candidates" / b.id;
    std::filesystem::create_directories(cdir);
    for (std::size_t k = 0; k < b.frames.size(); ++k) write_png(b.frames[k], cdir / ("frame_" + std::to_string(k) + ".png"));
    CandidateBundle meta = b;
    meta.frames.clear();
    meta.status = CandidateStatus::kPending;
    {
      std::ofstream f(cdir / "bundle.json");
      f << meta.to_json().dump(2) << '\n';
    }
    append_event({{"type", "candidate"}, {"bundle", meta.to_json()}});
    candidates_.emplace(meta.id, std::move(meta));
    order_.push_back(b.id);
    ++added;
  }
  return added;
}

PreferenceRecord PreferenceStore::ingest_ranking(const std::string& session_id,
                                                 const std::vector<std::string>& ordering,
                                                 std::int64_t timestamp_ms) {
  PreferenceRecord record = PreferenceRecord::from_ordering(session_id, timestamp_ms, ordering);
  std::unique_lock lock(mutex_);
  for (const auto& id : ordering) {
    auto it = candidates_.find(id);
    require(it != candidates_.end(), ErrorKind::kConflict, "unknown candidate " + id);
    require(it->second.status == CandidateStatus::kPending, ErrorKind::kConflict, "candidate " + id + " is not pending");
  }
  append_event({{"type", "ranking"}, {"record", record.to_json()}});
  for (const auto& id : ordering) candidates_.at(id).status = CandidateStatus::kRanked;
  records_.push_back(record);
  return record;
}

std::vector<nlohmann::json> PreferenceStore::list() const {
  std::shared_lock lock(mutex_);
  std::vector<nlohmann::json> out;
  for (const auto& id : order_) out.push_back(candidates_.at(id).summary());
  return out;
}

std::optional<CandidateStatus> PreferenceStore::status(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = candidates_.find(id);
  if (it == candidates_.end()) return std::nullopt;
  return it->second.status;
}

std::vector<unsigned char> PreferenceStore::frame_png(const std::string& id, std::size_t k) const {
  std::filesystem::path file;
  {
    std::shared_lock lock(mutex_);
    auto it = candidates_.find(id);
    require(it != candidates_.end(), ErrorKind::kNotFound, "unknown candidate " + id);
    require(k < it->second.plan.horizon(), ErrorKind::kNotFound, "frame index out of range");
    file = dir_ / "candidates" / id / ("frame_" + std::to_string(k) + ".png");
  }
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorKind::kNotFound, "missing frame file " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<PreferenceRecord> PreferenceStore::records() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::size_t PreferenceStore::pair_count() const {
  std::shared_lock lock(mutex_);
  std::size_t n = 0;
  for (const auto& r : records_) n += r.pairs.size();
  return n;
}

std::size_t PreferenceStore::pending_count() const {
  std::shared_lock lock(mutex_);
  return static_cast<std::size_t>(std::count_if(candidates_.begin(), candidates_.end(), [](const auto& kv) {
    return kv.second.status == CandidateStatus::kPending;
  }));
}

std::map<std::string, std::vector<Belief>> PreferenceStore::traces() const {
  std::shared_lock lock(mutex_);
  std::map<std::string, std::vector<Belief>> out;
  for (const auto& [id, b] : candidates_) out.emplace(id, b.trace);
  return out;
}

std::uint64_t PreferenceStore::state_hash() const {
  std::shared_lock lock(mutex_);
  io::Fnv1a h;
  auto add = [&h](const std::string& s) {
    h.update(s.data(), s.size());
    h.update_value(std::uint8_t{0});
  };
  for (const auto& id : order_) add(candidates_.at(id).to_json().dump());
  for (const auto& r : records_) add(r.to_json().dump());
  return h.digest();
}

TeacherService::TeacherService(std::shared_ptr<PreferenceStore> store, std::shared_ptr<const LearningSystem> ls,
                               ContentmentModel cm, PreferenceTraining training)
    : store_(std::move(store)),
      ls_(std::move(ls)),
      training_(training),
      cm_(std::make_shared<const ContentmentModel>(std::move(cm))) {
  require(store_ != nullptr && ls_ != nullptr, ErrorKind::kPrecondition, "teacher service needs a store and models");
}

std::shared_ptr<const ContentmentModel> TeacherService::contentment() const {
  std::lock_guard lock(snapshot_mutex_);
  return cm_;
}

PreferenceRecord TeacherService::ingest(const std::string& session_id, const std::vector<std::string>& ordering) {
  std::lock_guard lock(writer_);
  return store_->ingest_ranking(session_id, ordering, now_ms());
}

PreferenceReport TeacherService::retrain() {
  std::lock_guard lock(writer_);
  auto records = store_->records();
  std::size_t pairs = 0;
  for (const auto& r : records) pairs += r.pairs.size();
  require(pairs > 0, ErrorKind::kPrecondition, "no preferences stored yet");
  const auto traces = store_->traces();
  TraceResolver resolve = [&traces](const std::string& id) -> const std::vector<Belief>* {
    auto it = traces.find(id);
    return it == traces.end() ? nullptr : &it->second;
  };
  ContentmentModel next = *contentment();
  PreferenceReport report = train_preferences(next, records, resolve, training_);
  {
    std::lock_guard swap(snapshot_mutex_);
    cm_ = std::make_shared<const ContentmentModel>(std::move(next));
  }
  return report;
}

void TeacherService::set_agent_status(ServiceStatus s) {
  std::lock_guard lock(snapshot_mutex_);
  status_ = std::move(s);
}

nlohmann::json TeacherService::status() const {
  ServiceStatus s;
  std::shared_ptr<const ContentmentModel> cm;
  {
    std::lock_guard lock(snapshot_mutex_);
    s = status_;
    cm = cm_;
  }
  nlohmann::json hashes{{"f", io::hex64(ls_->transition().hash())},
                        {"g", io::hex64(ls_->decoder().hash())},
                        {"h", io::hex64(cm->model().hash())}};
  if (ls_->has_encoder()) hashes["g_plus"] = io::hex64(ls_->encoder().hash());
  return {{"agent_mode", s.agent_mode},
          {"steps_taken", s.steps_taken},
          {"pending_candidates", store_->pending_count()},
          {"pairs", store_->pair_count()},
          {"model_hashes", hashes}};
}

struct TeacherServer::Impl {
  httplib::Server server;
};

namespace {

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConflict: return 409;
    case ErrorKind::kNotFound: return 404;
    case ErrorKind::kPrecondition:
    case ErrorKind::kShape:
    case ErrorKind::kFormat:
    case ErrorKind::kConfig: return 400;
    default: return 500;
  }
}

void send_json(httplib::Response& res, int code, const nlohmann::json& body) {
  res.status = code;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int code, const std::string& message) {
  send_json(res, code, {{"error", message}});
}

}  // namespace

TeacherServer::TeacherServer(TeacherService& service, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  TeacherService* svc = &service;

  srv.Get("/api/candidates", [svc](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, svc->store().list());
  });

  srv.Get(R"(/api/candidates/([^/]+)/frame/(\d+))", [svc](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!valid_id(id)) return send_error(res, 404, "unknown candidate");
    try {
      const auto k = static_cast<std::size_t>(std::stoull(req.matches[2]));
      auto png = svc->store().frame_png(id, k);
      res.status = 200;
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const Error& e) {
      send_error(res, http_status(e.kind()), e.what());
    } catch (const std::out_of_range&) {
      send_error(res, 404, "frame index out of range");
    }
  });

  srv.Post("/api/rankings", [svc](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return send_error(res, 400, "body is not valid JSON");
    }
    if (!body.is_object() || !body.contains("ordering") || !body["ordering"].is_array())
      return send_error(res, 400, "expected {session_id, ordering:[ids]}");
    try {
      auto ordering = body["ordering"].get<std::vector<std::string>>();
      auto record = svc->ingest(body.value("session_id", std::string("anonymous")), ordering);
      send_json(res, 201, record.to_json());
    } catch (const Error& e) {
      send_error(res, http_status(e.kind()), e.what());
    } catch (const nlohmann::json::exception&) {
      send_error(res, 400, "ordering must be a list of ids");
    }
  });

  srv.Post("/api/retrain", [svc](const httplib::Request&, httplib::Response& res) {
    try {
      auto report = svc->retrain();
      send_json(res, 200, report.to_json());
    } catch (const Error& e) {
      const int code = e.kind() == ErrorKind::kPrecondition ? 409 : http_status(e.kind());
      send_error(res, code, e.what());
    }
  });

  srv.Get("/api/status", [svc](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, svc->status());
  });

  if (!static_dir.empty()) {
    require(std::filesystem::is_directory(static_dir), ErrorKind::kConfig,
            "static dir does not exist: " + static_dir.string());
    srv.set_mount_point("/", static_dir.string());
  }
}

TeacherServer::~TeacherServer() { stop(); }

bool TeacherServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int TeacherServer::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool TeacherServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void TeacherServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

void TeacherServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace manic
