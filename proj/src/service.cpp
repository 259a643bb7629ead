#include "lmtree/service.hpp"

#include <atomic>
#include <charconv>

#include <httplib.h>

namespace lmtree {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

template <typename T>
std::optional<T> query_number(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    std::string v = req.get_param_value(key);
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw std::invalid_argument(std::string("query parameter '") + key + "' is not a number");
    return out;
}

nlohmann::json evaluation_json(const Evaluation& e) {
    return {{"sensitivity", e.sensitivity}, {"metrics", e.metrics.to_json()}, {"counts", e.counts.to_json()}};
}

}  // namespace

struct Service::Impl {
    RunStore& store;
    httplib::Server server;
    std::atomic<bool> serving{false};

    explicit Impl(RunStore& s) : store(s) { routes(); }

    // Maps library exceptions to status codes.
    template <typename F>
    httplib::Server::Handler guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const RunNotFound& e) {
                send_error(res, 404, e.what());
            } catch (const VersionNotFound& e) {
                send_error(res, 404, e.what());
            } catch (const NodeNotFound& e) {
                send_error(res, 404, e.what());
            } catch (const InvalidAction& e) {
                send_error(res, 422, e.what());
            } catch (const UnsupportedAction& e) {
                send_error(res, 501, e.what());
            } catch (const BackendFailure& e) {
                send_error(res, 502, e.what());
            } catch (const FatalError& e) {
                send_error(res, 502, e.what());
            } catch (const nlohmann::json::exception& e) {
                send_error(res, 400, std::string("malformed request body: ") + e.what());
            } catch (const std::invalid_argument& e) {
                send_error(res, 400, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        };
    }

    void routes() {
        // httplib defaults to SO_REUSEPORT, which would let a second server share a busy port.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                    {"Access-Control-Allow-Headers", "Content-Type"},
                                    {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
        server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        server.Get("/runs", guarded([this](const httplib::Request&, httplib::Response& res) {
            auto runs = nlohmann::json::array();
            for (const auto& id : store.list()) {
                Run& run = store.open(id);
                auto t = run.tree();
                runs.push_back({{"id", id},
                                {"version", t->version},
                                {"task", t->task},
                                {"nodes", t->node_count()},
                                {"has_validation", run.validation_data() != nullptr}});
            }
            send_json(res, 200, {{"runs", runs}});
        }));

        server.Get(R"(/runs/([^/]+)/tree)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            Run& run = store.open(req.matches[1]);
            auto latest = run.tree();
            nlohmann::json body{{"latest", latest->version}, {"sensitivity", run.sensitivity()}};
            if (auto v = query_number<std::uint64_t>(req, "version"); v && *v != latest->version) {
                body["version"] = *v;
                body["tree"] = serialize(run.tree_at(*v));
            } else {
                body["version"] = latest->version;
                body["tree"] = serialize(*latest);
            }
            send_json(res, 200, body);
        }));

        server.Get(R"(/runs/([^/]+)/nodes/([^/]+)/samples)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       Run& run = store.open(req.matches[1]);
                       const std::string node = req.matches[2];
                       auto t = run.tree();
                       const TreeNode* n = t->find(node);
                       if (!n) throw NodeNotFound("no node '" + node + "'");
                       auto offset = query_number<std::size_t>(req, "offset").value_or(0);
                       auto limit = query_number<std::size_t>(req, "limit").value_or(100);
                       auto samples = run.node_samples(node);
                       auto items = nlohmann::json::array();
                       for (std::size_t i = offset; i < samples.size() && i < offset + limit; ++i)
                           items.push_back(samples[i]->to_json());
                       send_json(res, 200,
                                 {{"version", t->version},
                                  {"node", node},
                                  {"counts", {{"pos", n->counts.pos}, {"neg", n->counts.neg}}},
                                  {"total", samples.size()},
                                  {"offset", offset},
                                  {"samples", items}});
                   }));

        server.Get(R"(/runs/([^/]+)/metrics)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            Run& run = store.open(req.matches[1]);
            const double s = query_number<double>(req, "sensitivity").value_or(run.sensitivity());
            if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("sensitivity must lie in [0, 1]");
            auto t = run.tree();
            const Dataset& data = run.validation_data() ? *run.validation_data() : run.train_data();
            auto answers = gateway_answers(run.gateway(), t->task);
            auto at = evaluate(*t, data.refs(), answers, run.schema(), s, run.beta());
            auto best = select_sensitivity(*t, data.refs(), answers, run.schema(), run.beta());
            send_json(res, 200,
                      {{"version", t->version},
                       {"set", run.validation_data() ? "validation" : "train"},
                       {"current", evaluation_json(at)},
                       {"best", {{"sensitivity", best.sensitivity},
                                 {"metrics", best.metrics.to_json()},
                                 {"counts", best.counts.to_json()}}},
                       {"grid", best.grid},
                       {"usage", run.gateway().usage().to_json()}});
        }));

        server.Post(R"(/runs/([^/]+)/actions)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            Run& run = store.open(req.matches[1]);
            auto body = nlohmann::json::parse(req.body);
            if (!body.contains("base_version")) throw std::invalid_argument("request needs 'base_version'");
            auto action = RefinementAction::from_json(body.at("action"));
            auto out = run.apply(action, body["base_version"].get<std::uint64_t>());
            nlohmann::json j{{"status", to_string(out.status)}, {"version", out.version}};
            if (out.status == ActionOutcome::Status::Conflict) {
                j["error"] = "base version is stale";
                send_json(res, 409, j);
                return;
            }
            j["diff"] = out.diff.to_json();
            if (out.record) j["record"] = out.record->to_json();
            if (out.qa) j["qa"] = out.qa->to_json();
            if (out.validation) j["validation"] = evaluation_json(*out.validation);
            send_json(res, 200, j);
        }));

        server.Post(R"(/runs/([^/]+)/qa)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            Run& run = store.open(req.matches[1]);
            auto body = nlohmann::json::parse(req.body);
            auto version = run.latest_version();
            auto report = run.qa(body.at("node").get<std::string>(), body.at("question").get<std::string>());
            send_json(res, 200, {{"version", version}, {"report", report.to_json()}});
        }));

        server.Get(R"(/runs/([^/]+)/audit)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            Run& run = store.open(req.matches[1]);
            auto version = run.latest_version();
            auto records = nlohmann::json::array();
            for (const auto& r : run.audit()) records.push_back(r.to_json());
            send_json(res, 200, {{"version", version}, {"records", records}});
        }));
    }
};

Service::Service(RunStore& store) : impl_(std::make_unique<Impl>(store)) {}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
    if (port == 0) {
        int p = impl_->server.bind_to_any_port(host);
        if (p < 0) throw ServiceError("cannot bind " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port))
        throw ServiceError("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
    return port;
}

void Service::serve() {
    impl_->serving = true;
    impl_->server.listen_after_bind();
    impl_->serving = false;
}

void Service::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
    impl_->store.flush_all();
}

bool Service::running() const { return impl_->server.is_running(); }

}  // namespace lmtree
