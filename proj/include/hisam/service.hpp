// SPDX-License-Identifier: Apache-2.0
//
// Annotation sessions over HTTP. A session holds one uploaded image, its
// cached embedding and the draft labels under review.
//
//   POST  /sessions                 image bytes (PNG/JPEG)  -> {"id", ...}
//   POST  /sessions/{id}/prompt     {"x", "y"}              -> word/line/paragraph RLE masks
//   POST  /sessions/{id}/amg        optional AMG overrides  -> prediction dump
//   PATCH /sessions/{id}/labels     {"version", ...}        -> {"version"}
//   GET   /sessions/{id}/export                             -> HierText JSON
#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "hisam/data.hpp"
#include "hisam/inference.hpp"
#include "hisam/model.hpp"

namespace httplib {
class Server;
}

namespace hisam {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::chrono::seconds idle_timeout{1800};
    AmgConfig amg;
};

struct Session {
    std::string id;
    cv::Mat image;                  // RGB
    torch::Tensor embedding;        // computed once at upload
    std::chrono::steady_clock::time_point created, last_used;
    AnnotationTree labels;
    int64_t version = 0;
    std::shared_mutex mutex;        // prompts share, label edits are exclusive
};

struct Reply {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

class AnnotationService {
public:
    using Clock = std::chrono::steady_clock;

    AnnotationService(HiSam model, ServiceConfig cfg = {});
    ~AnnotationService();

    Reply create_session(const std::string& image_bytes);
    Reply prompt(const std::string& id, const std::string& body);
    Reply run_amg(const std::string& id, const std::string& body);
    Reply patch_labels(const std::string& id, const std::string& body);
    Reply export_labels(const std::string& id);

    /// Drop sessions idle for longer than the configured timeout.
    size_t expire_idle(Clock::time_point now = Clock::now());
    size_t session_count() const;
    std::shared_ptr<Session> find(const std::string& id) const;

    /// Blocking HTTP server on cfg.host:cfg.port.
    void serve();
    /// Stop a running serve() from another thread.
    void stop();
    bool running() const;

    const ServiceConfig& config() const { return cfg_; }

private:
    HiSam model_;
    ServiceConfig cfg_;
    mutable std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    uint64_t next_id_ = 1;
    std::unique_ptr<httplib::Server> server_;
};

} // namespace hisam
