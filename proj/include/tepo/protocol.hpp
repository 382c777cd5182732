#pragma once

// Line-oriented JSON protocol between the environment and an external
// segmenter, over a child process's stdio or a TCP connection.
//
//   -> {"op":"set_case","id":str,"h":int,"w":int,"image":b64 u8[h*w]}
//   <- {"ok":true}
//   -> {"op":"predict","prompts":[{"kind":"point","r":..,"c":..,"label":"pos"|"neg"}
//                                 | {"kind":"box","r0":..,"c0":..,"r1":..,"c1":..}]}
//   <- {"ok":true,"prob":b64 f32-LE[h*w]}
//   <- {"ok":false,"err":str}
//
// set_case may also carry "truth" (b64 of h*w bytes, 0 or 1) and "seed"
// (decimal string). Only the mock server reads them.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "tepo/segmenter.hpp"

namespace tepo::protocol {

inline constexpr int kMaxSide = 8192;

std::string encode_image(const Image& img);
/// 8-bit grayscale bytes to [0,1] intensities.
Image decode_image(const std::string& b64, int h, int w);
std::string encode_prob(const ProbMap& p);
/// Throws ProtocolError if the payload is not h*w floats.
ProbMap decode_prob(const std::string& b64, int h, int w);

nlohmann::json prompt_to_json(const Prompt& p);
/// Validates against the grid; throws ProtocolError.
Prompt prompt_from_json(const nlohmann::json& j, int h, int w);

std::string set_case_line(const Case& c, bool include_truth);
std::string predict_line(const PromptSet& prompts);
std::string ok_line();
std::string prob_line(const ProbMap& p);
std::string error_line(const std::string& message);

/// A bidirectional newline-delimited byte stream.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  /// Appends '\n'. Throws TransportError.
  virtual void send_line(const std::string& line) = 0;
  /// Without the trailing newline. Throws TransportError on EOF or failure.
  virtual std::string recv_line() = 0;
};

/// Runs `command` through /bin/sh -c with its stdin/stdout as the channel.
std::unique_ptr<LineChannel> spawn_child(const std::string& command);
/// Connects to host:port.
std::unique_ptr<LineChannel> connect_tcp(const std::string& host, int port);

struct RemoteOptions {
  /// Send the extension fields so the mock server needs no dataset.
  bool include_truth = false;
};

/// SegmenterBackend that forwards to a protocol peer. Errors: TransportError
/// when the stream breaks, ProtocolError for unusable or {"ok":false} replies.
class RemoteSegmenter final : public SegmenterBackend {
 public:
  RemoteSegmenter(std::unique_ptr<LineChannel> channel, RemoteOptions opts = {});
  void set_case(const Case& c) override;
  ProbMap predict(const PromptSet& prompts) override;
  std::string name() const override { return "remote"; }

 private:
  nlohmann::json exchange(const std::string& line);

  std::unique_ptr<LineChannel> channel_;
  RemoteOptions opts_;
  std::optional<std::pair<int, int>> shape_;
};

/// Protocol server backed by mock_predict. Cases come from the request's
/// extension fields or, failing that, from `known` by id.
class MockServer {
 public:
  explicit MockServer(MockConfig cfg, std::map<std::string, Case> known = {});

  /// One request line in, one reply line out (without newline). Never throws
  /// for bad input.
  std::string handle(const std::string& line);
  /// Forgets the current case (new connection).
  void reset_session() { current_.reset(); }

  /// Serves until EOF on `in_fd`.
  void serve_fds(int in_fd, int out_fd);
  /// Serves connections one after another on a bound listening socket.
  /// Returns after `max_connections` connections when it is nonzero.
  void serve_listener(int listen_fd, std::size_t max_connections = 0);

 private:
  MockConfig cfg_;
  std::map<std::string, Case> known_;
  std::optional<Case> current_;
};

/// Binds and listens on host:port (port 0 picks a free port). Returns the fd
/// and stores the actual port.
int listen_tcp(const std::string& host, int port, int* bound_port);

}  // namespace tepo::protocol
