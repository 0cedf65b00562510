#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "damo/qa_augment.hpp"
#include "damo/rng.hpp"

namespace damo::testing {

/// Annotation with 1 to 4 one-decimal segments inside a 20 to 200 s video.
inline TimedAnnotation random_annotation(Rng& rng, std::size_t index) {
  static const char* events[] = {"a dog runs across the yard", "someone pours coffee", "the car turns left",
                                 "a child laughs", "the lights go out", "a man opens the window"};
  TimedAnnotation a;
  a.video_id = "vid" + std::to_string(index);
  a.duration = std::round(rng.uniform(20, 200) * 10) / 10;
  const std::size_t n = 1 + rng.index(4);
  for (std::size_t i = 0; i < n; ++i) {
    double s = std::round(rng.uniform(0, a.duration) * 10) / 10, e = std::round(rng.uniform(0, a.duration) * 10) / 10;
    if (s > e) std::swap(s, e);
    if (s == e) e = std::min(a.duration, s + 0.1);
    if (s == e) s -= 0.1;
    a.segments.push_back({s, e, events[rng.index(6)]});
  }
  return a;
}

}  // namespace damo::testing
