#pragma once

#include <fftw3.h>

#include <map>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include "parastrip/core.hpp"

namespace parastrip::fft {

enum class Direction { forward, backward };

namespace detail {

// Planning is not thread-safe in FFTW; execution with the new-array API is.
class PlanCache {
public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(int dim, int n, Direction dir) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto key = std::make_tuple(dim, n, dir);
        auto it = plans_.find(key);
        if (it != plans_.end()) return it->second;
        std::size_t total = dim == 1 ? std::size_t(n) : std::size_t(n) * n;
        std::vector<cplx> scratch(total);
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        int sign = dir == Direction::forward ? FFTW_FORWARD : FFTW_BACKWARD;
        unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        fftw_plan plan = dim == 1 ? fftw_plan_dft_1d(n, buf, buf, sign, flags)
                                  : fftw_plan_dft_2d(n, n, buf, buf, sign, flags);
        plans_.emplace(key, plan);
        return plan;
    }

    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

private:
    PlanCache() = default;
    std::mutex mutex_;
    std::map<std::tuple<int, int, Direction>, fftw_plan> plans_;
};

}  // namespace detail

/// In-place DFT over an n (dim 1) or n x n (dim 2, row-major) block.
/// The backward transform is normalized so that backward(forward(u)) == u.
inline void transform(int dim, int n, std::span<cplx> data, Direction dir) {
    fftw_plan plan = detail::PlanCache::instance().get(dim, n, dir);
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(plan, buf, buf);
    if (dir == Direction::backward) {
        double scale = 1.0 / double(data.size());
        for (auto& v : data) v *= scale;
    }
}

}  // namespace parastrip::fft
