#include "hvr/parallel.hpp"

#include <doctest.h>

#include <atomic>
#include <stdexcept>
#include <string>
#include <vector>

TEST_SUITE("parallel") {
  TEST_CASE("every index runs exactly once") {
    for (unsigned t : {1u, 3u, 8u}) {
      hvr::set_thread_count(t);
      std::vector<std::atomic<int>> hits(1000);
      hvr::parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
      for (auto& h : hits) CHECK(h.load() == 1);
    }
    hvr::set_thread_count(0);
  }

  TEST_CASE("the lowest failing index is reported") {
    hvr::set_thread_count(4);
    try {
      hvr::parallel_for(200, [](std::size_t i) {
        if (i % 50 == 17) throw std::runtime_error(std::to_string(i));
      });
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "17");
    }
    hvr::set_thread_count(0);
  }

  TEST_CASE("empty range is a no-op") {
    bool called = false;
    hvr::parallel_for(0, [&](std::size_t) { called = true; });
    CHECK_FALSE(called);
  }

  TEST_CASE("set_thread_count overrides the default") {
    hvr::set_thread_count(3);
    CHECK(hvr::thread_count() == 3);
    hvr::set_thread_count(0);
    CHECK(hvr::thread_count() >= 1);
  }
}
