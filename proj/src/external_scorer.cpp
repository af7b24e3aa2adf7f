#include "restorl/external_scorer.hpp"

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>

#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include "restorl/io.hpp"

namespace restorl {

namespace {

std::string encode_request(const Grid& image) {
  nlohmann::json req = {
      {"shape", {image.channels(), image.height(), image.width()}},
      {"dtype", "f64le"},
      {"data", base64_encode(image.data(), image.size() * sizeof(double))},
  };
  return req.dump();
}

double parse_score(const std::string& text) {
  std::size_t pos = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw RewardServiceError("external scorer returned a malformed response: '" + text + "'");
  }
  for (; pos < text.size(); ++pos) {
    if (!std::isspace(static_cast<unsigned char>(text[pos]))) {
      throw RewardServiceError("external scorer returned trailing garbage: '" + text + "'");
    }
  }
  if (!std::isfinite(value) || value < 1.0 || value > 5.0) {
    throw RewardServiceError("external scorer returned out-of-range score " +
                             std::to_string(value) + " (expected [1,5])");
  }
  return value;
}

}  // namespace

struct ExternalScorer::Impl {
  ExternalScorerConfig config;

  // subprocess state
  pid_t child = -1;
  int to_child = -1;
  int from_child = -1;
  std::string read_buffer;

  // http state
  std::unique_ptr<httplib::Client> client;
  std::string http_path;

  explicit Impl(const ExternalScorerConfig& cfg) : config(cfg) {
    if (config.mode == "subprocess") {
      start_subprocess();
    } else if (config.mode == "http") {
      setup_http();
    } else {
      throw std::invalid_argument("ExternalScorer: unknown mode '" + config.mode + "'");
    }
  }

  ~Impl() {
    if (to_child >= 0) close(to_child);
    if (from_child >= 0) close(from_child);
    if (child > 0) {
      kill(child, SIGTERM);
      int status = 0;
      waitpid(child, &status, 0);
    }
  }

  void start_subprocess() {
    if (config.command.empty()) {
      throw std::invalid_argument("ExternalScorer: subprocess mode needs a command");
    }
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
      throw RewardServiceError("ExternalScorer: pipe() failed");
    }
    child = fork();
    if (child < 0) throw RewardServiceError("ExternalScorer: fork() failed");
    if (child == 0) {
      dup2(in_pipe[0], STDIN_FILENO);
      dup2(out_pipe[1], STDOUT_FILENO);
      close(in_pipe[0]);
      close(in_pipe[1]);
      close(out_pipe[0]);
      close(out_pipe[1]);
      execl("/bin/sh", "sh", "-c", config.command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child = in_pipe[1];
    from_child = out_pipe[0];
  }

  void setup_http() {
    const std::string& url = config.url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
      throw std::invalid_argument("ExternalScorer: malformed url '" + url + "'");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string host_port =
        url.substr(0, path_start == std::string::npos ? url.size() : path_start);
    http_path = path_start == std::string::npos ? "/" : url.substr(path_start);
    client = std::make_unique<httplib::Client>(host_port);
    client->set_connection_timeout(0, config.timeout_ms * 1000);
    client->set_read_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
    client->set_write_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
  }

  std::string read_line_with_timeout() {
    for (;;) {
      const auto nl = read_buffer.find('\n');
      if (nl != std::string::npos) {
        std::string line = read_buffer.substr(0, nl);
        read_buffer.erase(0, nl + 1);
        return line;
      }
      pollfd pfd{from_child, POLLIN, 0};
      const int rc = poll(&pfd, 1, config.timeout_ms);
      if (rc == 0) throw RewardServiceError("external scorer timed out after " +
                                            std::to_string(config.timeout_ms) + " ms");
      if (rc < 0) throw RewardServiceError("external scorer poll failed: " +
                                           std::string(std::strerror(errno)));
      char buf[4096];
      const ssize_t n = read(from_child, buf, sizeof(buf));
      if (n <= 0) throw RewardServiceError("external scorer closed its output stream");
      read_buffer.append(buf, static_cast<std::size_t>(n));
    }
  }

  double score(const Grid& image) {
    const std::string request = encode_request(image);
    if (config.mode == "subprocess") {
      const std::string line = request + "\n";
      std::size_t written = 0;
      while (written < line.size()) {
        const ssize_t n = write(to_child, line.data() + written, line.size() - written);
        if (n <= 0) throw RewardServiceError("external scorer stdin write failed");
        written += static_cast<std::size_t>(n);
      }
      return parse_score(read_line_with_timeout());
    }
    const auto res = client->Post(http_path, request, "application/json");
    if (!res) {
      throw RewardServiceError("external scorer endpoint unreachable: " + config.url +
                               " (" + httplib::to_string(res.error()) + ")");
    }
    if (res->status != 200) {
      throw RewardServiceError("external scorer returned HTTP " + std::to_string(res->status));
    }
    return parse_score(res->body);
  }
};

ExternalScorer::ExternalScorer(const ExternalScorerConfig& config)
    : impl_(std::make_unique<Impl>(config)) {}

ExternalScorer::~ExternalScorer() = default;

double ExternalScorer::score(const Grid& image) {
  if (!all_finite(image)) throw std::invalid_argument("ExternalScorer: non-finite input");
  return impl_->score(image);
}

}  // namespace restorl
