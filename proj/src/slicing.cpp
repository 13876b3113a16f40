#include "evpupil/slicing.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "evpupil/errors.hpp"

namespace evpupil {

std::string_view to_string(SliceTermination termination) {
  switch (termination) {
    case SliceTermination::Threshold: return "threshold";
    case SliceTermination::MaxDuration: return "max_duration";
    case SliceTermination::MaxEvents: return "max_events";
    case SliceTermination::StreamEnd: return "stream_end";
  }
  return "stream_end";
}

SliceTermination parse_termination(std::string_view text) {
  if (text == "threshold") return SliceTermination::Threshold;
  if (text == "max_duration") return SliceTermination::MaxDuration;
  if (text == "max_events") return SliceTermination::MaxEvents;
  if (text == "stream_end") return SliceTermination::StreamEnd;
  throw ValidationError("unknown slice termination '" + std::string(text) + "'");
}

AdaptiveSlicer::AdaptiveSlicer(int width, int height, const PipelineConfig& config)
    : width_(width),
      height_(height),
      d_(config.downsample_factor),
      grid_w_((width + config.downsample_factor - 1) / config.downsample_factor),
      grid_h_((height + config.downsample_factor - 1) / config.downsample_factor),
      threshold_(config.slicing_threshold),
      max_duration_(config.max_slice_duration_us),
      max_events_(static_cast<std::size_t>(config.max_slice_events)),
      inv_sqrt_cells_(1.0 / std::sqrt(static_cast<double>(grid_w_) * grid_h_)),
      accumulator_(static_cast<std::size_t>(grid_w_) * grid_h_, 0) {
  config.validate();
  if (width <= 0 || height <= 0) throw ArgumentError("sensor geometry must be positive");
}

EventSlice AdaptiveSlicer::take(SliceTermination termination) {
  EventSlice slice;
  slice.t_start = pending_.front().t;
  slice.t_end = pending_.back().t;
  slice.termination = termination;
  slice.events = std::move(pending_);
  pending_.clear();
  for (std::uint32_t idx : touched_) accumulator_[idx] = 0;
  touched_.clear();
  mu_ = 0.0;
  sigma_current_ = 0.0;
  sigma_running_ = 0.0;
  return slice;
}

std::size_t AdaptiveSlicer::push(const Event& e, std::vector<EventSlice>& out) {
  if (e.x >= width_ || e.y >= height_) {
    throw ValidationError(fmt::format("event at ({},{}) outside {}x{} sensor", e.x, e.y, width_, height_));
  }
  std::size_t emitted = 0;
  if (!pending_.empty() && e.t - pending_.front().t > max_duration_) {
    out.push_back(take(SliceTermination::MaxDuration));
    ++emitted;
  }

  pending_.push_back(e);
  ++n_global_;

  if (e.x % d_ == 0 || e.y % d_ == 0) {
    const auto idx = static_cast<std::uint32_t>((e.y / d_) * grid_w_ + e.x / d_);
    // |p| is always 1, so the cell becomes (or stays) active.
    if (accumulator_[idx] == 0) {
      accumulator_[idx] = 1;
      touched_.push_back(idx);
      mu_ += (1.0 - 0.0) / static_cast<double>(accumulator_.size());
    }
    sigma_current_ = std::abs(mu_ - 1.0) * inv_sqrt_cells_;
    const double inv_n = 1.0 / static_cast<double>(n_global_);
    sigma_running_ = (1.0 - inv_n) * sigma_running_ + inv_n * sigma_current_;
    if (sigma_running_ > threshold_) {
      out.push_back(take(SliceTermination::Threshold));
      return emitted + 1;
    }
  }

  if (pending_.size() >= max_events_) {
    out.push_back(take(SliceTermination::MaxEvents));
    ++emitted;
  }
  return emitted;
}

std::optional<EventSlice> AdaptiveSlicer::finish() {
  if (pending_.empty()) return std::nullopt;
  return take(SliceTermination::StreamEnd);
}

std::vector<EventSlice> adaptive_slice(const EventStream& stream, const PipelineConfig& config) {
  stream.validate();
  AdaptiveSlicer slicer(stream.width, stream.height, config);
  std::vector<EventSlice> slices;
  for (const Event& e : stream.events) slicer.push(e, slices);
  if (auto last = slicer.finish()) slices.push_back(std::move(*last));
  return slices;
}

std::vector<EventSlice> fixed_time_slice(const EventStream& stream, std::int64_t window_us) {
  if (window_us <= 0) throw ArgumentError("fixed-time window must be > 0");
  std::vector<EventSlice> slices;
  std::int64_t current_bin = -1;
  for (const Event& e : stream.events) {
    const std::int64_t bin = e.t / window_us;
    if (bin != current_bin) {
      if (!slices.empty()) slices.back().termination = SliceTermination::MaxDuration;
      slices.push_back(EventSlice{{}, e.t, e.t, SliceTermination::StreamEnd});
      current_bin = bin;
    }
    slices.back().events.push_back(e);
    slices.back().t_end = e.t;
  }
  return slices;
}

std::vector<EventSlice> fixed_count_slice(const EventStream& stream, std::size_t n) {
  if (n == 0) throw ArgumentError("fixed-count slice size must be > 0");
  std::vector<EventSlice> slices;
  const auto& ev = stream.events;
  for (std::size_t begin = 0; begin < ev.size(); begin += n) {
    const std::size_t end = std::min(begin + n, ev.size());
    EventSlice s;
    s.events.assign(ev.begin() + static_cast<std::ptrdiff_t>(begin),
                    ev.begin() + static_cast<std::ptrdiff_t>(end));
    s.t_start = s.events.front().t;
    s.t_end = s.events.back().t;
    s.termination = (end - begin == n) ? SliceTermination::MaxEvents : SliceTermination::StreamEnd;
    slices.push_back(std::move(s));
  }
  return slices;
}

EventFrame build_frame(const EventSlice& slice, int width, int height) {
  if (width <= 0 || height <= 0) throw ArgumentError("frame geometry must be positive");
  EventFrame frame;
  frame.width = width;
  frame.height = height;
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  frame.pos_count.assign(n, 0);
  frame.neg_count.assign(n, 0);
  frame.t_start = slice.t_start;
  frame.t_end = slice.t_end;
  for (const Event& e : slice.events) {
    if (e.x >= width || e.y >= height) {
      throw ValidationError(fmt::format("event at ({},{}) outside {}x{} frame", e.x, e.y, width, height));
    }
    const std::size_t idx = static_cast<std::size_t>(e.y) * width + e.x;
    if (e.p > 0) {
      ++frame.pos_count[idx];
    } else {
      ++frame.neg_count[idx];
    }
  }
  return frame;
}

void write_slice_report(std::span<const EventSlice> slices, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "slice_idx,t_start_us,t_end_us,n_events,termination\n";
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const EventSlice& s = slices[i];
    out << fmt::format("{},{},{},{},{}\n", i, s.t_start, s.t_end, s.events.size(), to_string(s.termination));
  }
  if (!out) throw IoError("write failure on " + path.string());
}

std::vector<SliceBoundary> read_slice_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<SliceBoundary> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::stringstream ss(line);
    std::string idx, t0, t1, n, term;
    if (!std::getline(ss, idx, ',') || !std::getline(ss, t0, ',') || !std::getline(ss, t1, ',') ||
        !std::getline(ss, n, ',') || !std::getline(ss, term)) {
      throw ParseError(line_no, "expected 5 slice report fields");
    }
    if (!term.empty() && term.back() == '\r') term.pop_back();
    try {
      out.push_back({std::stoll(t0), std::stoll(t1), static_cast<std::size_t>(std::stoull(n)),
                     parse_termination(term)});
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed slice report row");
    }
  }
  return out;
}

std::vector<EventSlice> apply_slice_report(const EventStream& stream,
                                           std::span<const SliceBoundary> boundaries) {
  std::vector<EventSlice> slices;
  slices.reserve(boundaries.size());
  std::size_t cursor = 0;
  for (const SliceBoundary& b : boundaries) {
    if (b.n_events == 0 || cursor + b.n_events > stream.events.size()) {
      throw ValidationError("slice report does not match the event stream");
    }
    EventSlice s;
    s.events.assign(stream.events.begin() + static_cast<std::ptrdiff_t>(cursor),
                    stream.events.begin() + static_cast<std::ptrdiff_t>(cursor + b.n_events));
    s.t_start = s.events.front().t;
    s.t_end = s.events.back().t;
    s.termination = b.termination;
    if (s.t_start != b.t_start || s.t_end != b.t_end) {
      throw ValidationError("slice report timestamps do not match the event stream");
    }
    cursor += b.n_events;
    slices.push_back(std::move(s));
  }
  if (cursor != stream.events.size()) throw ValidationError("slice report does not cover the stream");
  return slices;
}

}  // namespace evpupil
