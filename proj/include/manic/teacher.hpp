#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "manic/agent.hpp"
#include "manic/contentment.hpp"
#include "manic/learning_system.hpp"
#include "manic/planner.hpp"

namespace manic {

enum class CandidateStatus { kPending, kRanked };

// One imagined rollout offered to the teacher.
struct CandidateBundle {
  std::string id;
  Plan plan;
  Belief v0;
  // Beliefs along the rollout; ranking trains h on these.
  std::vector<Belief> trace;
  std::vector<Observation> frames;
  std::int64_t created_at_ms = 0;
  CandidateStatus status = CandidateStatus::kPending;

  // Metadata without frames.
  nlohmann::json to_json() const;
  static CandidateBundle from_json(const nlohmann::json& j);
  nlohmann::json summary() const;
};

// Content hash of (plan, v0) as 16 hex digits.
std::string candidate_id(const Plan& plan, const Belief& v0);

// Number of time steps at which two plans choose different actions.
std::size_t plan_distance(const Plan& a, const Plan& b);

// Indices into plans: `first`, then greedily the plan whose minimum distance
// to those already chosen is largest. Plans identical to a chosen one are
// never picked, so fewer than n indices come back when the pool lacks
// variety. Ties go to the earlier index in a seed-shuffled order.
std::vector<std::size_t> select_diverse(const std::vector<Plan>& plans, std::size_t first, std::size_t n,
                                        std::uint64_t seed);

// The elite plan plus n-1 diverse plans from an evaluated pool, each
// rendered through imagine_video from v0.
std::vector<CandidateBundle> generate_candidates(const PlanPool& pool, const LearningSystem& ls, const Belief& v0,
                                                 std::size_t n, std::uint64_t diversity_seed,
                                                 std::int64_t created_at_ms);
std::vector<CandidateBundle> generate_candidates(const ManicAgent& agent, std::size_t n, std::uint64_t diversity_seed,
                                                 std::int64_t created_at_ms);

// Candidate ids sorted by a teacher's utility, best first; ties keep input order.
std::vector<std::string> rank_candidates(const std::vector<CandidateBundle>& bundles,
                                         const std::function<double(const CandidateBundle&)>& utility);

// Append-only store: preferences.jsonl holds candidate and ranking events in
// order; candidates/<id>/ holds bundle.json and frame_<k>.png. Opening an
// existing directory replays the log.
class PreferenceStore {
 public:
  explicit PreferenceStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  // Persists new bundles; ids already present are skipped. Returns the number added.
  std::size_t add_candidates(const std::vector<CandidateBundle>& bundles);
  PreferenceRecord ingest_ranking(const std::string& session_id, const std::vector<std::string>& ordering,
                                  std::int64_t timestamp_ms);

  std::vector<nlohmann::json> list() const;
  std::optional<CandidateStatus> status(const std::string& id) const;
  std::vector<unsigned char> frame_png(const std::string& id, std::size_t k) const;
  std::vector<PreferenceRecord> records() const;
  std::size_t pair_count() const;
  std::size_t pending_count() const;
  // Snapshot of id -> trace for every known candidate.
  std::map<std::string, std::vector<Belief>> traces() const;
  // Hash over candidate metadata, statuses and records.
  std::uint64_t state_hash() const;

 private:
  void append_event(const nlohmann::json& event);
  void replay();

  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, CandidateBundle> candidates_;
  std::vector<std::string> order_;
  std::vector<PreferenceRecord> records_;
};

struct ServiceStatus {
  std::string agent_mode = "hybrid";
  std::size_t steps_taken = 0;
};

// Ranking intake and h retraining over a store. Reads run concurrently;
// ingest and retrain are serialized. The h snapshot is replaced atomically.
class TeacherService {
 public:
  TeacherService(std::shared_ptr<PreferenceStore> store, std::shared_ptr<const LearningSystem> ls, ContentmentModel cm,
                 PreferenceTraining training = {});

  PreferenceStore& store() { return *store_; }
  const PreferenceStore& store() const { return *store_; }
  std::shared_ptr<const ContentmentModel> contentment() const;
  std::shared_ptr<const LearningSystem> learning_system() const { return ls_; }

  PreferenceRecord ingest(const std::string& session_id, const std::vector<std::string>& ordering);
  // kPrecondition when the store holds no pairs.
  PreferenceReport retrain();

  void set_agent_status(ServiceStatus s);
  nlohmann::json status() const;

 private:
  std::shared_ptr<PreferenceStore> store_;
  std::shared_ptr<const LearningSystem> ls_;
  PreferenceTraining training_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const ContentmentModel> cm_;
  std::mutex writer_;
  ServiceStatus status_;
};

class TeacherServer {
 public:
  explicit TeacherServer(TeacherService& service, std::filesystem::path static_dir = {});
  ~TeacherServer();
  TeacherServer(const TeacherServer&) = delete;
  TeacherServer& operator=(const TeacherServer&) = delete;

  // Blocks until stop().
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port; call listen_after_bind() on another thread.
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

inline constexpr int kDefaultTeacherPort = 8421;

std::int64_t now_ms();

}  // namespace manic
