#include "tepo/protocol.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include "tepo/base64.hpp"
#include "tepo/log.hpp"
#include "tepo/synthdata.hpp"

namespace tepo::protocol {

using nlohmann::json;

std::string encode_image(const Image& img) {
  std::vector<std::uint8_t> px(img.values().size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize_intensity(img.values()[i]);
  return base64::encode(px);
}

Image decode_image(const std::string& b64, int h, int w) {
  std::vector<std::uint8_t> px;
  try {
    px = base64::decode(b64);
  } catch (const std::invalid_argument& e) {
    throw ProtocolError(std::string("image: ") + e.what());
  }
  if (px.size() != static_cast<std::size_t>(h) * w)
    throw ProtocolError("image has " + std::to_string(px.size()) + " bytes, expected h*w = " +
                        std::to_string(static_cast<std::size_t>(h) * w));
  Image img(h, w);
  for (std::size_t i = 0; i < px.size(); ++i) img.data()[i] = px[i] / 255.0;
  return img;
}

std::string encode_prob(const ProbMap& p) {
  const auto& v = p.values();
  std::vector<std::uint8_t> bytes(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(v[i]);
    for (int k = 0; k < 4; ++k) bytes[4 * i + k] = static_cast<std::uint8_t>(bits >> (8 * k));
  }
  return base64::encode(bytes);
}

ProbMap decode_prob(const std::string& b64, int h, int w) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64::decode(b64);
  } catch (const std::invalid_argument& e) {
    throw ProtocolError(std::string("prob: ") + e.what());
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 4 * n)
    throw ProtocolError("shape mismatch: prob has " + std::to_string(bytes.size()) +
                        " bytes, expected 4*h*w = " + std::to_string(4 * n));
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[4 * i + k]) << (8 * k);
    v[i] = std::bit_cast<float>(bits);
  }
  return ProbMap(h, w, std::move(v));
}

json prompt_to_json(const Prompt& p) {
  if (p.is_point()) {
    const auto& pt = p.as_point();
    return json{{"kind", "point"},
                {"r", pt.row},
                {"c", pt.col},
                {"label", pt.label == PointLabel::Positive ? "pos" : "neg"}};
  }
  const auto& b = p.as_box();
  return json{{"kind", "box"}, {"r0", b.r0}, {"c0", b.c0}, {"r1", b.r1}, {"c1", b.c1}};
}

namespace {

int get_int(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(std::string("missing field '") + key + "'");
  if (!it->is_number_integer()) throw ProtocolError(std::string("field '") + key + "' must be an integer");
  const auto v = it->get<std::int64_t>();
  if (v < INT32_MIN || v > INT32_MAX) throw ProtocolError(std::string("field '") + key + "' out of range");
  return static_cast<int>(v);
}

const std::string& get_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw ProtocolError(std::string("field '") + key + "' must be a string");
  return it->get_ref<const std::string&>();
}

}  // namespace

Prompt prompt_from_json(const json& j, int h, int w) {
  if (!j.is_object()) throw ProtocolError("prompt must be an object");
  const std::string& kind = get_string(j, "kind");
  try {
    if (kind == "point") {
      const std::string& label = get_string(j, "label");
      if (label != "pos" && label != "neg") throw ProtocolError("point label must be 'pos' or 'neg'");
      return Prompt::point(get_int(j, "r"), get_int(j, "c"),
                           label == "pos" ? PointLabel::Positive : PointLabel::Negative, h, w);
    }
    if (kind == "box")
      return Prompt::box(get_int(j, "r0"), get_int(j, "c0"), get_int(j, "r1"), get_int(j, "c1"), h, w);
  } catch (const std::out_of_range& e) {
    throw ProtocolError(e.what());
  }
  throw ProtocolError("unknown prompt kind '" + kind + "'");
}

std::string set_case_line(const Case& c, bool include_truth) {
  json j{{"op", "set_case"},
         {"id", c.id},
         {"h", c.image.height()},
         {"w", c.image.width()},
         {"image", encode_image(c.image)}};
  if (include_truth) {
    j["truth"] = base64::encode(c.truth.values());
    j["seed"] = std::to_string(c.seed);
  }
  return j.dump();
}

std::string predict_line(const PromptSet& prompts) {
  json arr = json::array();
  for (const auto& p : prompts) arr.push_back(prompt_to_json(p));
  return json{{"op", "predict"}, {"prompts", arr}}.dump();
}

std::string ok_line() { return R"({"ok":true})"; }

std::string prob_line(const ProbMap& p) {
  return json{{"ok", true}, {"prob", encode_prob(p)}}.dump();
}

std::string error_line(const std::string& message) {
  return json{{"ok", false}, {"err", message}}.dump(-1, ' ', false, json::error_handler_t::replace);
}

// ---------------------------------------------------------------------------
// Channels

namespace {

constexpr std::size_t kMaxLine = std::size_t{1} << 28;

class FdChannel : public LineChannel {
 public:
  FdChannel(int in_fd, int out_fd, bool socket) : in_(in_fd), out_(out_fd), socket_(socket) {}

  void send_line(const std::string& line) override {
    std::string msg = line;
    msg += '\n';
    std::size_t off = 0;
    while (off < msg.size()) {
      const ssize_t n = socket_ ? ::send(out_, msg.data() + off, msg.size() - off, MSG_NOSIGNAL)
                                : ::write(out_, msg.data() + off, msg.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("write to backend failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string recv_line() override {
    for (;;) {
      const auto nl = buf_.find('\n', scanned_);
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        scanned_ = 0;
        return line;
      }
      scanned_ = buf_.size();
      if (buf_.size() > kMaxLine) throw TransportError("backend line exceeds size limit");
      char chunk[65536];
      const ssize_t n = ::read(in_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("read from backend failed: ") + std::strerror(errno));
      }
      if (n == 0) throw TransportError("backend closed the connection");
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  int in_;
  int out_;
  bool socket_;
  std::string buf_;
  std::size_t scanned_ = 0;
};

class ChildChannel final : public FdChannel {
 public:
  ChildChannel(int in_fd, int out_fd, pid_t pid) : FdChannel(in_fd, out_fd, false), pid_(pid) {}
  ~ChildChannel() override {
    ::close(out_);
    using namespace std::chrono;
    const auto deadline = steady_clock::now() + seconds(2);
    int status = 0;
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (steady_clock::now() > deadline) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(milliseconds(5));
    }
    ::close(in_);
  }

 private:
  pid_t pid_;
};

class SocketChannel final : public FdChannel {
 public:
  explicit SocketChannel(int fd) : FdChannel(fd, fd, true) {}
  ~SocketChannel() override { ::close(in_); }
};

}  // namespace

std::unique_ptr<LineChannel> spawn_child(const std::string& command) {
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw TransportError("pipe failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw TransportError("pipe failed");
  }
  // A dead child must surface as EPIPE, not kill us.
  ::signal(SIGPIPE, SIG_IGN);
  const pid_t pid = ::fork();
  if (pid < 0) throw TransportError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
  return std::make_unique<ChildChannel>(from_child[0], to_child[1], pid);
}

std::unique_ptr<LineChannel> connect_tcp(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_s = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), port_s.c_str(), &hints, &res); rc != 0)
    throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + host + ":" + port_s);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return std::make_unique<SocketChannel>(fd);
}

// ---------------------------------------------------------------------------
// Client

RemoteSegmenter::RemoteSegmenter(std::unique_ptr<LineChannel> channel, RemoteOptions opts)
    : channel_(std::move(channel)), opts_(opts) {
  if (!channel_) throw std::invalid_argument("remote segmenter needs a channel");
}

json RemoteSegmenter::exchange(const std::string& line) {
  channel_->send_line(line);
  const std::string reply = channel_->recv_line();
  json j = json::parse(reply, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("backend reply is not a JSON object");
  const auto ok = j.find("ok");
  if (ok == j.end() || !ok->is_boolean()) throw ProtocolError("backend reply lacks boolean 'ok'");
  if (!ok->get<bool>()) {
    const auto err = j.find("err");
    throw ProtocolError("backend error: " +
                        (err != j.end() && err->is_string() ? err->get<std::string>()
                                                            : std::string("(no message)")));
  }
  return j;
}

void RemoteSegmenter::set_case(const Case& c) {
  shape_.reset();
  exchange(set_case_line(c, opts_.include_truth));
  shape_ = std::make_pair(c.image.height(), c.image.width());
}

ProbMap RemoteSegmenter::predict(const PromptSet& prompts) {
  if (!shape_) throw BackendError("predict called before set_case");
  if (prompts.empty()) throw BackendError("predict needs at least one prompt");
  const json j = exchange(predict_line(prompts));
  const auto it = j.find("prob");
  if (it == j.end() || !it->is_string()) throw ProtocolError("predict reply lacks string 'prob'");
  return decode_prob(it->get<std::string>(), shape_->first, shape_->second);
}

// ---------------------------------------------------------------------------
// Server

MockServer::MockServer(MockConfig cfg, std::map<std::string, Case> known)
    : cfg_(cfg), known_(std::move(known)) {
  cfg_.validate();
}

std::string MockServer::handle(const std::string& line) {
  try {
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) return error_line("malformed JSON");
    if (!j.is_object()) return error_line("request must be a JSON object");
    const std::string& op = get_string(j, "op");
    if (op == "set_case") {
      current_.reset();
      const std::string& id = get_string(j, "id");
      const int h = get_int(j, "h");
      const int w = get_int(j, "w");
      if (h < 1 || w < 1 || h > kMaxSide || w > kMaxSide)
        return error_line("h and w must be in [1," + std::to_string(kMaxSide) + "]");
      Case c;
      c.id = id;
      c.image = decode_image(get_string(j, "image"), h, w);
      if (j.contains("truth")) {
        std::vector<std::uint8_t> t;
        try {
          t = base64::decode(get_string(j, "truth"));
        } catch (const std::invalid_argument& e) {
          return error_line(std::string("truth: ") + e.what());
        }
        if (t.size() != static_cast<std::size_t>(h) * w) return error_line("truth must have h*w bytes");
        for (auto v : t)
          if (v > 1) return error_line("truth bytes must be 0 or 1");
        c.truth = BinaryMask(h, w, std::move(t));
        const std::string& seed = get_string(j, "seed");
        try {
          std::size_t used = 0;
          c.seed = std::stoull(seed, &used);
          if (used != seed.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          return error_line("seed must be a decimal string");
        }
      } else {
        const auto it = known_.find(id);
        if (it == known_.end())
          return error_line("unknown case id '" + id + "' (serve with --data or send truth)");
        if (it->second.truth.height() != h || it->second.truth.width() != w)
          return error_line("case '" + id + "' is " + std::to_string(it->second.truth.height()) +
                            "x" + std::to_string(it->second.truth.width()));
        c.truth = it->second.truth;
        c.seed = it->second.seed;
      }
      current_ = std::move(c);
      return ok_line();
    }
    if (op == "predict") {
      if (!current_) return error_line("predict before set_case");
      const auto it = j.find("prompts");
      if (it == j.end() || !it->is_array()) return error_line("field 'prompts' must be an array");
      if (it->empty()) return error_line("prompts must not be empty");
      PromptSet ps;
      for (const auto& p : *it) ps.append(prompt_from_json(p, current_->truth.height(), current_->truth.width()));
      return prob_line(mock_predict(*current_, ps, cfg_));
    }
    return error_line("unknown op '" + op + "'");
  } catch (const std::exception& e) {
    return error_line(e.what());
  }
}

void MockServer::serve_fds(int in_fd, int out_fd) {
  FdChannel ch(in_fd, out_fd, false);
  for (;;) {
    std::string line;
    try {
      line = ch.recv_line();
    } catch (const TransportError&) {
      return;
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      ch.send_line(handle(line));
    } catch (const TransportError&) {
      return;
    }
  }
}

void MockServer::serve_listener(int listen_fd, std::size_t max_connections) {
  std::size_t served = 0;
  while (max_connections == 0 || served < max_connections) {
    const int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      throw TransportError(std::string("accept failed: ") + std::strerror(errno));
    }
    ++served;
    log::debug("client connected");
    reset_session();
    SocketChannel ch(fd);
    for (;;) {
      std::string line;
      try {
        line = ch.recv_line();
      } catch (const TransportError&) {
        break;
      }
      if (!line.empty() && line.back() == '\r') line.pop_back();
      try {
        ch.send_line(handle(line));
      } catch (const TransportError&) {
        break;
      }
    }
    log::debug("client disconnected");
  }
}

int listen_tcp(const std::string& host, int port, int* bound_port) {
  if (port < 0 || port > 65535) throw std::invalid_argument("port must be in [0,65535]");
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw TransportError("socket failed");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw std::invalid_argument("listen host must be an IPv4 address: " + host);
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 8) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw TransportError("cannot listen on " + host + ":" + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  if (bound_port) *bound_port = ntohs(addr.sin_port);
  return fd;
}

}  // namespace tepo::protocol
