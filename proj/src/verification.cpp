#include "arena/verification.hpp"

#include "arena/digest.hpp"
#include "arena/error.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <charconv>
#include <cmath>
#include <fstream>

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(VerificationOutcome o)
{
  switch (o) {
  case VerificationOutcome::verified: return "verified";
  case VerificationOutcome::invalidated: return "invalidated";
  case VerificationOutcome::failed: return "failed";
  }
  return "failed";
}

namespace {

bool logs_match(const InstanceLog& claimed, const InstanceLog& rerun, double tolerance)
{
  if (claimed.rows.size() != rerun.rows.size()) {
    return false;
  }
  std::map<std::string, const InstanceResult*> index;
  for (const auto& r : rerun.rows) {
    index[r.instance] = &r;
  }
  for (const auto& c : claimed.rows) {
    const auto it = index.find(c.instance);
    if (it == index.end() || it->second->status != c.status) {
      return false;
    }
    if (c.status == InstanceStatus::solved) {
      if (!c.objective || !it->second->objective ||
          std::abs(*c.objective - *it->second->objective) > tolerance) {
        return false;
      }
    }
  }
  return true;
}

} // namespace

VerificationOutcome process_verification(const Submission& submission, const ScoreRecord& claimed,
                                         const EvaluatorSpec& spec, const VerifierHook& hook,
                                         const VerificationPolicy& policy)
{
  VerifierResult result;
  try {
    result = hook(submission, spec);
  } catch (const std::exception& e) {
    result = VerifierResult::failure(e.what());
  }
  if (!result.ok) {
    spdlog::warn("verification of submission {} failed: {}", submission.submission_id, result.error);
    return VerificationOutcome::failed;
  }
  if (spec.metric == Metric::map_at_k) {
    if (!result.score || !claimed.primary_score) {
      return VerificationOutcome::failed;
    }
    return std::abs(*claimed.primary_score - *result.score) <= policy.map_tolerance
             ? VerificationOutcome::verified
             : VerificationOutcome::invalidated;
  }
  if (!result.log) {
    return VerificationOutcome::failed;
  }
  InstanceLog claimed_log;
  try {
    claimed_log = parse_instance_log(*submission.payload);
  } catch (const Error&) {
    return VerificationOutcome::invalidated;
  }
  return logs_match(claimed_log, *result.log, policy.objective_tolerance) ? VerificationOutcome::verified
                                                                          : VerificationOutcome::invalidated;
}

VerifierResult RecomputeVerifier::operator()(const Submission& submission, const EvaluatorSpec& spec) const
{
  VerifierResult r;
  if (spec.metric == Metric::map_at_k) {
    const auto rec = evaluate_map(parse_ranking_submission(*submission.payload, spec.k),
                                  lookup_(spec.ground_truth), spec);
    r.ok = true;
    r.score = rec.primary_score;
  } else {
    r.ok = true;
    r.log = parse_instance_log(*submission.payload);
  }
  return r;
}

CommandOutput run_command(const std::vector<std::string>& argv, std::chrono::milliseconds timeout)
{
  CommandOutput result;
  if (argv.empty()) {
    return result;
  }
  int pipefd[2];
  if (::pipe(pipefd) != 0) {
    throw Error(ErrorKind::io, "pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(pipefd[0]);
    ::close(pipefd[1]);
    throw Error(ErrorKind::io, "fork failed");
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(pipefd[1], STDOUT_FILENO);
    ::close(pipefd[0]);
    ::close(pipefd[1]);
    std::vector<char*> args;
    for (const auto& a : argv) {
      args.push_back(const_cast<char*>(a.c_str()));
    }
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(pipefd[1]);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      result.timed_out = true;
      break;
    }
    pollfd pfd{pipefd[0], POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) {
      continue;
    }
    if (rc == 0) {
      result.timed_out = true;
      break;
    }
    const auto n = ::read(pipefd[0], buf, sizeof buf);
    if (n <= 0) {
      break;
    }
    result.out.append(buf, static_cast<std::size_t>(n));
  }
  ::close(pipefd[0]);
  if (result.timed_out) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
  }
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (!result.timed_out && WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  }
  return result;
}

CommandVerifier::CommandVerifier(std::vector<std::string> argv, fs::path storage_dir, fs::path scratch_dir,
                                 std::chrono::milliseconds timeout)
  : argv_(std::move(argv)),
    storage_dir_(std::move(storage_dir)),
    scratch_dir_(std::move(scratch_dir)),
    timeout_(timeout)
{
}

VerifierResult CommandVerifier::operator()(const Submission& submission, const EvaluatorSpec& spec) const
{
  const auto payload_path = scratch_dir_ / ("verify-" + std::to_string(submission.submission_id));
  write_file_atomic(payload_path, *submission.payload);
  const auto reference = spec.metric == Metric::map_at_k ? spec.ground_truth : spec.benchmark_manifest;
  auto argv = argv_;
  argv.push_back(payload_path.string());
  argv.push_back(reference.empty() ? std::string() : (storage_dir_ / reference).string());
  const auto out = run_command(argv, timeout_);
  std::error_code ec;
  fs::remove(payload_path, ec);
  if (out.timed_out) {
    return VerifierResult::failure("verifier timed out");
  }
  if (out.exit_code != 0) {
    return VerifierResult::failure("verifier exited with status " + std::to_string(out.exit_code));
  }
  VerifierResult r;
  try {
    if (spec.metric == Metric::map_at_k) {
      auto text = out.out;
      while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) {
        text.pop_back();
      }
      double v = 0;
      const auto [p, errc] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (text.empty() || errc != std::errc{} || p != text.data() + text.size() || !std::isfinite(v)) {
        return VerifierResult::failure("verifier printed no score");
      }
      r.score = v;
    } else {
      r.log = parse_instance_log(out.out);
    }
  } catch (const Error& e) {
    return VerifierResult::failure(std::string("unreadable verifier output: ") + e.what());
  }
  r.ok = true;
  return r;
}

namespace {

json message_to_json(const VerificationMessage& m)
{
  return {{"submission_id", m.submission_id},
          {"evaluator_version", m.evaluator_version},
          {"outcome", to_string(m.outcome)},
          {"detail", m.detail}};
}

VerificationMessage message_from_json(const json& j)
{
  VerificationMessage m;
  m.submission_id = j.at("submission_id").get<SubmissionId>();
  m.evaluator_version = j.at("evaluator_version").get<int>();
  const auto o = j.at("outcome").get<std::string>();
  m.outcome = o == "verified" ? VerificationOutcome::verified
              : o == "invalidated" ? VerificationOutcome::invalidated
                                   : VerificationOutcome::failed;
  m.detail = j.value("detail", "");
  return m;
}

} // namespace

VerificationQueue::VerificationQueue(fs::path file) : file_(std::move(file))
{
  if (file_.empty() || !fs::exists(file_)) {
    return;
  }
  std::ifstream in(file_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    try {
      messages_.push_back(message_from_json(json::parse(line)));
    } catch (const json::exception&) {
      // A torn final line from a crash mid-append.
      spdlog::warn("ignoring unreadable verification queue line");
    }
  }
}

void VerificationQueue::push(const VerificationMessage& message)
{
  std::lock_guard lock(mutex_);
  if (!file_.empty()) {
    append_line_durable(file_, message_to_json(message).dump());
  }
  messages_.push_back(message);
}

std::vector<VerificationMessage> VerificationQueue::read(std::size_t offset, std::size_t max) const
{
  std::lock_guard lock(mutex_);
  std::vector<VerificationMessage> out;
  for (std::size_t i = offset; i < messages_.size() && out.size() < max; ++i) {
    out.push_back(messages_[i]);
  }
  return out;
}

std::size_t VerificationQueue::size() const
{
  std::lock_guard lock(mutex_);
  return messages_.size();
}

} // namespace arena
