#pragma once

#include <memory>
#include <string>

#include "annot/error.hpp"
#include "annot/project_service.hpp"

namespace annot {

/// HTTP status for an error code: 400, 404, 409, 422, 502 or 500.
int http_status(ErrorCode code);

/// JSON API over a ProjectService:
///   POST /projects
///   POST /projects/{id}/dataset
///   POST /projects/{id}/plan
///   POST /projects/{id}/pretrain
///   POST /projects/{id}/batches
///   GET  /projects/{id}/batches/current
///   POST /projects/{id}/batches/{rid}/corrections
///   POST /projects/{id}/validate
///   POST /projects/{id}/evaluate
///   GET  /projects/{id}/metrics
///   GET  /projects/{id}/transcript
///   GET  /projects/{id}/events?since=N&timeout=MS
///   GET  /projects/{id}
class ApiServer {
 public:
  explicit ApiServer(ProjectService& service);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace annot
