// SPDX-License-Identifier: Apache-2.0

#include "crb/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace crb
{

namespace
{

std::atomic<unsigned> g_threads{0};

double pairwise_sum_impl(const double *v, std::size_t n)
{
  if (n <= 8)
  {
    double s = 0.0;
    for (std::size_t i = 0; i < n; i++)
    {
      s += v[i];
    }
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum_impl(v, h) + pairwise_sum_impl(v + h, n - h);
}

}  // namespace

void set_thread_count(unsigned n)
{
  g_threads = n;
}

unsigned thread_count()
{
  unsigned n = g_threads;
  if (n == 0)
  {
    n = std::max(1u, std::thread::hardware_concurrency());
  }
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body)
{
  const std::size_t workers = std::min<std::size_t>(thread_count(), n);
  if (workers <= 1)
  {
    for (std::size_t i = 0; i < n; i++)
    {
      body(i);
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]()
  {
    for (;;)
    {
      const std::size_t i = next.fetch_add(1);
      if (i >= n)
      {
        return;
      }
      try
      {
        body(i);
      }
      catch (...)
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error)
        {
          first_error = std::current_exception();
        }
        next = n;
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 0; t + 1 < workers; t++)
  {
    pool.emplace_back(worker);
  }
  worker();
  for (auto &t : pool)
  {
    t.join();
  }
  if (first_error)
  {
    std::rethrow_exception(first_error);
  }
}

double pairwise_sum(std::span<const double> values)
{
  return pairwise_sum_impl(values.data(), values.size());
}

std::uint64_t fnv1a(const void *data, std::size_t bytes, std::uint64_t seed)
{
  const auto *p = static_cast<const unsigned char *>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; i++)
  {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t h)
{
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index)
{
  // splitmix64 finalizer over a combination of the three words.
  auto mix = [](std::uint64_t z)
  {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ tag) ^ index);
}

}  // namespace crb
