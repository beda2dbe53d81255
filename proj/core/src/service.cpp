#include "hdae/service.hpp"

#include "hdae/image_io.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <iostream>
#include <random>
#include <stdexcept>

namespace hdae {

using json = nlohmann::json;

namespace {

struct ApiError : std::runtime_error {
    ApiError(int status, const std::string& msg) : std::runtime_error(msg), status(status) {}
    int status;
};

ApiResponse json_response(const json& j, int status = 200) {
    ApiResponse r;
    r.status = status;
    r.body = j.dump();
    return r;
}

ApiResponse error_response(int status, const std::string& msg) { return json_response({{"error", msg}}, status); }

json parse_body(const std::string& body) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ApiError(400, "request body must be a JSON object");
    }
    return j;
}

template <typename T>
T field(const json& j, const char* name) {
    if (!j.contains(name)) {
        throw ApiError(400, std::string("missing field '") + name + "'");
    }
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw ApiError(400, std::string("field '") + name + "' has the wrong type");
    }
}

std::string new_session_id() {
    static std::mutex m;
    static std::random_device rd;
    std::lock_guard lock(m);
    char buf[33];
    std::snprintf(buf, sizeof buf, "%08x%08x%08x%08x", rd(), rd(), rd(), rd());
    return buf;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

SessionStore::SessionStore(std::chrono::seconds ttl, Clock clock) : ttl_(ttl), clock_(std::move(clock)) {
    if (!clock_) {
        clock_ = [] { return std::chrono::steady_clock::now(); };
    }
}

void SessionStore::prune_locked(std::chrono::steady_clock::time_point now) {
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        it = now - it->second->created >= ttl_ ? sessions_.erase(it) : std::next(it);
    }
}

std::string SessionStore::insert(EncodedImage encoded, std::string thumbnail_png) {
    const auto now = clock_();
    auto s = std::make_shared<Session>();
    s->encoded = std::move(encoded);
    s->created = now;
    s->thumbnail_png = std::move(thumbnail_png);
    std::lock_guard lock(mutex_);
    prune_locked(now);
    do {
        s->id = new_session_id();
    } while (sessions_.count(s->id));
    sessions_.emplace(s->id, s);
    return s->id;
}

std::shared_ptr<const Session> SessionStore::find(const std::string& id) {
    std::lock_guard lock(mutex_);
    prune_locked(clock_());
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionStore::size() {
    std::lock_guard lock(mutex_);
    prune_locked(clock_());
    return sessions_.size();
}

bool GenerationQueue::run(const std::function<void()>& job) {
    if (pending_.fetch_add(1) >= depth_ + 1) {
        pending_.fetch_sub(1);
        return false;
    }
    struct Release {
        std::atomic<std::size_t>& p;
        ~Release() { p.fetch_sub(1); }
    } release{pending_};
    std::lock_guard lock(exclusive_);
    job();
    return true;
}

InferenceService::InferenceService(ModelBundle bundle, std::vector<AttributeDirection> registry, ServiceConfig config,
                                   SessionStore::Clock clock)
    : bundle_(std::move(bundle)), registry_(std::move(registry)), config_(std::move(config)),
      sessions_(config_.session_ttl, std::move(clock)), queue_(config_.queue_depth),
      plan_(bundle_.model->default_plan()) {
    bundle_.model->eval();
    const auto L = bundle_.model->config().code_levels();
    const auto d = bundle_.model->config().code_width();
    for (const auto& a : registry_) {
        if (a.levels != L || a.dim != d) {
            throw std::invalid_argument("attribute '" + a.name + "' does not match the model code shape");
        }
    }
}

const AttributeDirection* InferenceService::find_attribute(const std::string& name) const {
    for (const auto& a : registry_) {
        if (a.name == name) {
            return &a;
        }
    }
    return nullptr;
}

ApiResponse InferenceService::render(const HierarchicalCode& code, const StochasticCode& xT) {
    ApiResponse r;
    r.content_type = "image/png";
    const bool ran = queue_.run([&] {
        torch::NoGradGuard no_grad;
        auto img = generate(bundle_.model->predictor(), code, xT, plan_, bundle_.model->schedule());
        r.body = encode_png(img[0]);
    });
    if (!ran) {
        return error_response(503, "generation queue is full");
    }
    return r;
}

ApiResponse InferenceService::encode(const std::string& body) {
    if (body.size() > config_.max_body_bytes) {
        return error_response(413, "image exceeds " + std::to_string(config_.max_body_bytes) + " bytes");
    }
    ImageTensor x0;
    try {
        x0 = decode_image(body, bundle_.model->config().image_size);
    } catch (const std::exception& e) {
        return error_response(400, std::string("cannot decode image: ") + e.what());
    }
    EncodedImage enc;
    const bool ran = queue_.run([&] { enc = hdae::encode(bundle_.model, x0, plan_); });
    if (!ran) {
        return error_response(503, "generation queue is full");
    }
    const auto L = enc.code.num_levels();
    const auto d = enc.code.dim();
    auto id = sessions_.insert(std::move(enc), encode_png(x0));
    return json_response({{"session_id", id}, {"L", L}, {"d", d}});
}

ApiResponse InferenceService::reconstruct(const std::string& body) {
    try {
        const auto j = parse_body(body);
        auto s = sessions_.find(field<std::string>(j, "session_id"));
        if (!s) {
            return error_response(404, "unknown or expired session");
        }
        return render(s->encoded.code, s->encoded.xT);
    } catch (const ApiError& e) {
        return error_response(e.status, e.what());
    }
}

ApiResponse InferenceService::edit(const std::string& body) {
    try {
        const auto j = parse_body(body);
        auto s = sessions_.find(field<std::string>(j, "session_id"));
        if (!s) {
            return error_response(404, "unknown or expired session");
        }
        const auto* attr = find_attribute(field<std::string>(j, "attribute"));
        if (!attr) {
            return error_response(422, "attribute is not registered");
        }
        const double alpha = field<double>(j, "alpha");
        if (!std::isfinite(alpha)) {
            return error_response(422, "alpha must be finite");
        }
        int64_t k = attr->size();
        if (j.contains("k")) {
            if (j["k"].is_string() && j["k"] == "full") {
                k = attr->size();
            } else if (j["k"].is_number_integer()) {
                k = j["k"].get<int64_t>();
            } else {
                return error_response(422, "k must be an integer or \"full\"");
            }
        }
        if (k < 0 || k > attr->size()) {
            return error_response(422, "k must lie in [0, " + std::to_string(attr->size()) + "]");
        }
        const auto dir = truncate_direction(*attr, k);
        const auto edited = manipulate(s->encoded.code, dir, alpha);
        auto r = render(edited, s->encoded.xT);
        if (r.status == 200) {
            r.headers["X-Logit-Before"] = format_double(attribute_logits(*attr, s->encoded.code)[0]);
            r.headers["X-Logit-After"] = format_double(attribute_logits(*attr, edited)[0]);
        }
        return r;
    } catch (const ApiError& e) {
        return error_response(e.status, e.what());
    }
}

ApiResponse InferenceService::mix(const std::string& body) {
    try {
        const auto j = parse_body(body);
        auto a = sessions_.find(field<std::string>(j, "session_a"));
        auto b = sessions_.find(field<std::string>(j, "session_b"));
        if (!a || !b) {
            return error_response(404, "unknown or expired session");
        }
        const auto split = field<int64_t>(j, "split");
        const auto L = a->encoded.code.num_levels();
        if (split < 0 || split > L) {
            return error_response(422, "split must lie in [0, " + std::to_string(L) + "]");
        }
        return render(style_mix(a->encoded.code, b->encoded.code, split), a->encoded.xT);
    } catch (const ApiError& e) {
        return error_response(e.status, e.what());
    }
}

ApiResponse InferenceService::interpolate(const std::string& body) {
    try {
        const auto j = parse_body(body);
        auto a = sessions_.find(field<std::string>(j, "session_a"));
        auto b = sessions_.find(field<std::string>(j, "session_b"));
        if (!a || !b) {
            return error_response(404, "unknown or expired session");
        }
        InterpolationPath path;
        path.lambdas = field<std::vector<double>>(j, "lambdas");
        path.xT_weight = j.contains("xT_weight") ? field<double>(j, "xT_weight") : 0.0;
        try {
            path.validate(a->encoded.code.num_levels());
        } catch (const std::invalid_argument& e) {
            return error_response(422, e.what());
        }
        auto [code, xT] = hdae::interpolate(a->encoded, b->encoded, path);
        return render(code, xT);
    } catch (const ApiError& e) {
        return error_response(e.status, e.what());
    }
}

ApiResponse InferenceService::attributes() const {
    json arr = json::array();
    for (const auto& a : registry_) {
        const auto att = level_attribution(a);
        arr.push_back({{"name", a.name},
                       {"mass", att.mass},
                       {"argmax_level", att.argmax},
                       {"train_accuracy", a.train_accuracy}});
    }
    return json_response(arr);
}

ApiResponse InferenceService::health() const {
    const auto& cfg = bundle_.model->config();
    return json_response({{"status", "ok"},
                          {"model_hash", bundle_.hash},
                          {"variant", to_string(cfg.variant)},
                          {"L", cfg.code_levels()},
                          {"d", cfg.code_width()},
                          {"image_size", cfg.image_size}});
}

ApiResponse InferenceService::session_code(const std::string& id) {
    auto s = sessions_.find(id);
    if (!s) {
        return error_response(404, "unknown or expired session");
    }
    ApiResponse r;
    r.body = code_to_json(s->encoded.code, bundle_.hash);
    return r;
}

ApiResponse InferenceService::session_thumbnail(const std::string& id) {
    auto s = sessions_.find(id);
    if (!s) {
        return error_response(404, "unknown or expired session");
    }
    ApiResponse r;
    r.content_type = "image/png";
    r.body = s->thumbnail_png;
    return r;
}

ApiResponse InferenceService::dispatch(const std::string& method, const std::string& path, const std::string& body) {
    ApiResponse r;
    try {
        static const std::string session_prefix = "/api/sessions/";
        if (method == "OPTIONS") {
            r.status = 204;
            r.content_type.clear();
        } else if (method == "GET" && path == "/api/health") {
            r = health();
        } else if (method == "GET" && path == "/api/attributes") {
            r = attributes();
        } else if (method == "GET" && path.rfind(session_prefix, 0) == 0) {
            const auto rest = path.substr(session_prefix.size());
            const auto slash = rest.find('/');
            const auto id = rest.substr(0, slash);
            const auto what = slash == std::string::npos ? "" : rest.substr(slash + 1);
            r = what == "code"        ? session_code(id)
                : what == "thumbnail" ? session_thumbnail(id)
                                      : error_response(404, "no such route");
        } else if (method == "POST" && path == "/api/encode") {
            r = encode(body);
        } else if (method == "POST" && path == "/api/edit") {
            r = edit(body);
        } else if (method == "POST" && path == "/api/mix") {
            r = mix(body);
        } else if (method == "POST" && path == "/api/interpolate") {
            r = interpolate(body);
        } else if (method == "POST" && path == "/api/reconstruct") {
            r = reconstruct(body);
        } else {
            r = error_response(404, "no such route");
        }
    } catch (const std::exception& e) {
        std::clog << method << ' ' << path << " failed: " << e.what() << '\n';
        r = error_response(500, e.what());
    }
    r.headers["Access-Control-Allow-Origin"] = config_.cors_origin;
    r.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
    r.headers["Access-Control-Allow-Headers"] = "Content-Type";
    r.headers["Access-Control-Expose-Headers"] = "X-Logit-Before, X-Logit-After";
    return r;
}

namespace {
std::mutex g_server_mutex;
httplib::Server* g_server = nullptr;
} // namespace

void serve(InferenceService& service, const std::string& host, int port) {
    httplib::Server server;
    server.set_payload_max_length(service.config().max_body_bytes);
    auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
        const auto r = service.dispatch(req.method, req.path, req.body);
        res.status = r.status;
        for (const auto& [k, v] : r.headers) {
            res.set_header(k, v);
        }
        if (!r.content_type.empty()) {
            res.set_content(r.body, r.content_type);
        }
        std::clog << req.method << ' ' << req.path << " -> " << r.status << '\n';
    };
    const std::string pattern = R"(/api/.*)";
    server.Get(pattern, handler);
    server.Post(pattern, handler);
    server.Options(pattern, handler);
    {
        std::lock_guard lock(g_server_mutex);
        g_server = &server;
    }
    std::clog << "serving model " << service.model_hash().substr(0, 12) << " on " << host << ':' << port << std::endl;
    const bool ok = server.listen(host, port);
    {
        std::lock_guard lock(g_server_mutex);
        g_server = nullptr;
    }
    if (!ok) {
        throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    }
}

void stop_server() {
    std::lock_guard lock(g_server_mutex);
    if (g_server) {
        g_server->stop();
    }
}

} // namespace hdae
