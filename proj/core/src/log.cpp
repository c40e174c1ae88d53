#include "cbr/log.hpp"

#include <iostream>
#include <mutex>

#include "cbr/error.hpp"

namespace cbr {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& current_sink() {
  static WarningSink sink;
  return sink;
}

}  // namespace

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::generation: return "generation";
    case ErrorCode::template_error: return "template";
    case ErrorCode::usage: return "usage";
    case ErrorCode::query: return "query";
    case ErrorCode::alignment: return "alignment";
    case ErrorCode::degenerate_target: return "degenerate_target";
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::undefined_score: return "undefined_score";
    case ErrorCode::assembly: return "assembly";
    case ErrorCode::empty_cell: return "empty_cell";
    case ErrorCode::singular: return "singular";
    case ErrorCode::out_of_range: return "out_of_range";
  }
  return "unknown";
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(sink_mutex());
  auto previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

void warn(std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) {
    current_sink()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace cbr
