#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "regimerag/error.hpp"
#include "regimerag/forecaster.hpp"

namespace regimerag {

using nlohmann::json;

namespace {

json matrix_rows(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

}  // namespace

std::string encode_forecast_request(const ForecastInput& input) {
  json schema = json::array();
  for (const auto& v : input.schema.variables()) {
    schema.push_back({{"name", v.name},
                      {"role", v.role == VariableRole::Target ? "target" : "covariate"},
                      {"unit", v.unit}});
  }
  json req;
  req["schema"] = std::move(schema);
  req["history_len"] = input.history_len;
  req["horizon"] = input.horizon;
  req["context"] = matrix_rows(input.context);
  req["future_covariates"] = matrix_rows(input.future_covariates);
  return req.dump();
}

ForecastOutput decode_forecast_response(std::string_view line, std::size_t horizon) {
  json resp;
  try {
    resp = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, e.what());
  }
  if (resp.is_object() && resp.contains("error")) {
    throw Error(ErrorCode::BackendUnavailable, "backend error: " + resp["error"].dump());
  }
  if (!resp.is_object() || !resp.contains("prediction") || !resp["prediction"].is_array()) {
    throw Error(ErrorCode::MalformedResponse, "response lacks a prediction array");
  }
  ForecastOutput out;
  for (const auto& v : resp["prediction"]) {
    if (!v.is_number()) throw Error(ErrorCode::MalformedResponse, "non-numeric prediction entry");
    out.prediction.push_back(v.get<double>());
  }
  if (out.prediction.size() != horizon) {
    throw Error(ErrorCode::MalformedResponse, "prediction length " +
                                                  std::to_string(out.prediction.size()) +
                                                  " differs from horizon " + std::to_string(horizon));
  }
  for (double v : out.prediction) {
    if (!std::isfinite(v)) throw Error(ErrorCode::MalformedResponse, "non-finite prediction");
  }
  return out;
}

std::string request_key(std::string_view request_line) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : request_line) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// ExternalProcessForecaster

struct ExternalProcessForecaster::Child {
  pid_t pid = -1;
  int to_child = -1;
  int from_child = -1;
  std::string buffer;
};

ExternalProcessForecaster::ExternalProcessForecaster(std::vector<std::string> argv,
                                                     std::chrono::milliseconds timeout)
    : argv_(std::move(argv)), timeout_(timeout) {
  if (argv_.empty()) throw Error(ErrorCode::InvalidConfig, "external backend needs a command");
}

ExternalProcessForecaster::~ExternalProcessForecaster() {
  std::lock_guard lock(mutex_);
  stop();
}

void ExternalProcessForecaster::start() const {
  if (::signal(SIGPIPE, SIG_IGN) == SIG_ERR) {
    throw Error(ErrorCode::BackendUnavailable, "cannot ignore SIGPIPE");
  }
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0) throw Error(ErrorCode::BackendUnavailable, std::strerror(errno));
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error(ErrorCode::BackendUnavailable, std::strerror(errno));
  }
  std::vector<char*> args;
  for (const auto& a : argv_) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw Error(ErrorCode::BackendUnavailable, std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  child_ = std::make_unique<Child>();
  child_->pid = pid;
  child_->to_child = in_pipe[1];
  child_->from_child = out_pipe[0];
}

void ExternalProcessForecaster::stop() const {
  if (!child_) return;
  if (child_->to_child >= 0) ::close(child_->to_child);
  if (child_->from_child >= 0) ::close(child_->from_child);
  if (child_->pid > 0) {
    ::kill(child_->pid, SIGTERM);
    int status = 0;
    ::waitpid(child_->pid, &status, 0);
  }
  child_.reset();
}

std::string ExternalProcessForecaster::exchange(const std::string& request_line) const {
  std::lock_guard lock(mutex_);
  if (!child_) start();

  const auto fail = [this](const std::string& why) -> Error {
    stop();
    return Error(ErrorCode::BackendUnavailable, argv_.front() + ": " + why);
  };

  std::string payload = request_line;
  payload.push_back('\n');
  std::size_t sent = 0;
  while (sent < payload.size()) {
    const ssize_t n = ::write(child_->to_child, payload.data() + sent, payload.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw fail(std::string("write failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  while (true) {
    const auto nl = child_->buffer.find('\n');
    if (nl != std::string::npos) {
      std::string line = child_->buffer.substr(0, nl);
      child_->buffer.erase(0, nl + 1);
      return line;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) throw fail("timed out");
    pollfd pfd{child_->from_child, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw fail(std::string("poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) throw fail("timed out");
    char buf[65536];
    const ssize_t n = ::read(child_->from_child, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw fail(std::string("read failed: ") + std::strerror(errno));
    }
    if (n == 0) throw fail("process exited");
    child_->buffer.append(buf, static_cast<std::size_t>(n));
  }
}

ForecastOutput ExternalProcessForecaster::forecast(const ForecastInput& input) const {
  input.validate();
  return decode_forecast_response(exchange(encode_forecast_request(input)), input.horizon);
}

// ---------------------------------------------------------------------------
// ReplayCacheForecaster

ReplayCacheForecaster::ReplayCacheForecaster(std::filesystem::path cache_file,
                                             std::shared_ptr<const Forecaster> inner)
    : file_(std::move(cache_file)), inner_(std::move(inner)) {
  std::ifstream in(file_);
  if (!in) return;  // starts empty
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      entries_[j.at("key").get<std::string>()] = j.at("prediction").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedResponse,
                  file_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::size_t ReplayCacheForecaster::cached_entries() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

ForecastOutput ReplayCacheForecaster::forecast(const ForecastInput& input) const {
  input.validate();
  const std::string key = request_key(encode_forecast_request(input));
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      if (it->second.size() != input.horizon) {
        throw Error(ErrorCode::MalformedResponse, "cached prediction has wrong length");
      }
      return {it->second};
    }
  }
  if (!inner_) throw Error(ErrorCode::BackendUnavailable, "replay cache miss for " + key);
  ForecastOutput out = inner_->forecast(input);

  std::lock_guard lock(mutex_);
  if (entries_.emplace(key, out.prediction).second) {
    std::ofstream append(file_, std::ios::app);
    if (!append) throw Error(ErrorCode::Io, "cannot append to " + file_.string());
    append << json{{"key", key}, {"prediction", out.prediction}}.dump() << '\n';
  }
  return out;
}

}  // namespace regimerag
