#include "cseg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace cseg {

namespace {

std::atomic<std::size_t> g_threads{std::max<std::size_t>(1, std::thread::hardware_concurrency())};
std::atomic<bool> g_reference{false};

}  // namespace

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }

std::size_t num_threads() { return g_reference ? 1 : g_threads.load(); }

void set_reference_mode(bool on) { g_reference = on; }

bool reference_mode() { return g_reference; }

std::size_t chunk_count(std::size_t n) { return std::max<std::size_t>(1, std::min(n, num_threads())); }

std::size_t parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t chunks = chunk_count(n);
    auto bounds = [&](std::size_t c) { return std::pair{n * c / chunks, n * (c + 1) / chunks}; };
    if (chunks == 1) {
        fn(0, 0, n);
        return 1;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(chunks);
    workers.reserve(chunks - 1);
    for (std::size_t c = 1; c < chunks; ++c) {
        workers.emplace_back([&, c] {
            try {
                auto [b, e] = bounds(c);
                fn(c, b, e);
            } catch (...) {
                errors[c] = std::current_exception();
            }
        });
    }
    try {
        auto [b, e] = bounds(0);
        fn(0, b, e);
    } catch (...) {
        errors[0] = std::current_exception();
    }
    for (auto& w : workers) w.join();
    for (auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
    return chunks;
}

}  // namespace cseg
