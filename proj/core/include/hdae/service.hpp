#pragma once

#include "hdae/checkpoint.hpp"
#include "hdae/editing.hpp"
#include "hdae/latent_ops.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace hdae {

struct ServiceConfig {
    std::size_t max_body_bytes = 4 << 20;
    std::chrono::seconds session_ttl{3600};
    std::size_t queue_depth = 8; // waiting generations beyond the one in flight
    std::string cors_origin = "*";
};

/// Transport-independent HTTP response.
struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::map<std::string, std::string> headers;
};

struct Session {
    std::string id;
    EncodedImage encoded;
    std::chrono::steady_clock::time_point created;
    std::string thumbnail_png;
};

/// Concurrent session map with lazy expiry.
class SessionStore {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    explicit SessionStore(std::chrono::seconds ttl, Clock clock = {});

    std::string insert(EncodedImage encoded, std::string thumbnail_png);
    /// Expired or unknown ids yield nullptr.
    std::shared_ptr<const Session> find(const std::string& id);
    std::size_t size();

private:
    void prune_locked(std::chrono::steady_clock::time_point now);

    std::chrono::seconds ttl_;
    Clock clock_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::shared_ptr<const Session>> sessions_;
};

/// Admits at most `depth` waiting jobs plus one running job; the rest are rejected.
class GenerationQueue {
public:
    explicit GenerationQueue(std::size_t depth) : depth_(depth) {}

    /// Runs `job` exclusively. Returns false without running it when the queue is full.
    bool run(const std::function<void()>& job);
    std::size_t pending() const { return pending_.load(); }

private:
    std::size_t depth_;
    std::atomic<std::size_t> pending_{0};
    std::mutex exclusive_;
};

/// Handlers for the inference API, usable without a socket.
class InferenceService {
public:
    InferenceService(ModelBundle bundle, std::vector<AttributeDirection> registry, ServiceConfig config = {},
                     SessionStore::Clock clock = {});

    ApiResponse encode(const std::string& body);
    ApiResponse edit(const std::string& body);
    ApiResponse mix(const std::string& body);
    ApiResponse interpolate(const std::string& body);
    ApiResponse reconstruct(const std::string& body);
    ApiResponse attributes() const;
    ApiResponse health() const;
    ApiResponse session_code(const std::string& id);
    ApiResponse session_thumbnail(const std::string& id);

    /// Routes method + path to a handler; unknown routes give 404.
    ApiResponse dispatch(const std::string& method, const std::string& path, const std::string& body);

    const ServiceConfig& config() const { return config_; }
    SessionStore& sessions() { return sessions_; }
    const std::string& model_hash() const { return bundle_.hash; }

private:
    ApiResponse render(const HierarchicalCode& code, const StochasticCode& xT);
    const AttributeDirection* find_attribute(const std::string& name) const;

    ModelBundle bundle_;
    std::vector<AttributeDirection> registry_;
    ServiceConfig config_;
    SessionStore sessions_;
    GenerationQueue queue_;
    StepPlan plan_;
};

/// Blocks serving HTTP on host:port until stop_server() or a signal.
void serve(InferenceService& service, const std::string& host, int port);
void stop_server();

} // namespace hdae
