#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "service/bundle.hpp"

namespace stylecode::service {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
// Throws std::invalid_argument on characters outside the alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(const std::string& text);

inline constexpr int kMaxRequestImageSide = 256;
inline constexpr int kMaxCount = 16;
inline constexpr int kMaxSteps = 200;
inline constexpr std::size_t kMaxWeights = 16;

struct HttpResponse {
    int status = 200;
    std::string body;  // JSON
};

// Route handlers over an immutable, complete bundle. Each call is independent,
// so handlers may run concurrently.
class Service {
public:
    // Throws pipeline::MissingStage unless every stage is present.
    explicit Service(const Bundle& bundle);

    HttpResponse health() const;
    HttpResponse generate(const std::string& body) const;
    HttpResponse encode(const std::string& body) const;
    HttpResponse interpolate(const std::string& body) const;
    HttpResponse frequencies() const;

    const Bundle& bundle() const { return bundle_; }

private:
    const Bundle& bundle_;
};

// httplib server bound to a Service.
class HttpServer {
public:
    explicit HttpServer(const Service& service);
    ~HttpServer();

    // Binds and returns the port (0 picks a free one). Throws on failure.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    void listen();
    // Runs listen() on a background thread.
    void start();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace stylecode::service
