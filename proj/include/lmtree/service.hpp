#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "lmtree/store.hpp"

namespace lmtree {

class ServiceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// HTTP/JSON facade over a RunStore.
//   GET  /runs
//   GET  /runs/{id}/tree[?version=N]
//   GET  /runs/{id}/nodes/{node}/samples[?offset=&limit=]
//   GET  /runs/{id}/metrics[?sensitivity=]
//   POST /runs/{id}/actions   {"action": {...}, "base_version": N}
//   POST /runs/{id}/qa        {"node": "...", "question": "..."}
//   GET  /runs/{id}/audit
// Every run-scoped response carries "version", the tree version it reflects.
class Service {
public:
    explicit Service(RunStore& store);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds without serving; port 0 picks a free port. Throws ServiceError when the port is taken.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    void serve();
    // Stops serving and flushes answer caches.
    void stop();
    bool running() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace lmtree
