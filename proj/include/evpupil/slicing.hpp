#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "evpupil/config.hpp"
#include "evpupil/event.hpp"

namespace evpupil {

enum class SliceTermination { Threshold, MaxDuration, MaxEvents, StreamEnd };

std::string_view to_string(SliceTermination termination);
SliceTermination parse_termination(std::string_view text);

struct EventSlice {
  std::vector<Event> events;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  SliceTermination termination = SliceTermination::StreamEnd;

  std::int64_t duration_us() const noexcept { return t_end - t_start; }
};

/// Two-channel rasterization of a slice. Counts are row-major, width * height.
struct EventFrame {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> pos_count;
  std::vector<std::uint32_t> neg_count;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;

  std::int64_t t_mid() const noexcept { return t_start + (t_end - t_start) / 2; }
};

/// Streaming form of the adaptive slicer.
///
/// Each event joins the pending slice. Events on the downsample lattice
/// (x mod d == 0 or y mod d == 0) mark their accumulator cell active and update
/// the running statistics:
///   mu      = fraction of active cells
///   sigma_c = |mu - 1| / sqrt(cells)
///   sigma_r = (1 - 1/n) sigma_r + (1/n) sigma_c,  n = events seen since stream start
/// The slice is cut once sigma_r exceeds the threshold. Accumulator, mu and
/// sigma_r reset at every cut; n does not.
class AdaptiveSlicer {
 public:
  AdaptiveSlicer(int width, int height, const PipelineConfig& config);

  /// Feeds one event and appends any slices it closes to `out`: at most one
  /// for the duration valve it trips plus one for the threshold or count cut.
  /// Returns the number appended.
  std::size_t push(const Event& e, std::vector<EventSlice>& out);

  /// Flushes the pending events as a StreamEnd slice.
  std::optional<EventSlice> finish();

  double mu_current() const noexcept { return mu_; }
  double sigma_running() const noexcept { return sigma_running_; }
  double sigma_current() const noexcept { return sigma_current_; }
  std::uint64_t n_global() const noexcept { return n_global_; }
  std::size_t pending_size() const noexcept { return pending_.size(); }
  int grid_width() const noexcept { return grid_w_; }
  int grid_height() const noexcept { return grid_h_; }
  std::size_t cells() const noexcept { return accumulator_.size(); }
  std::span<const std::uint8_t> accumulator() const noexcept { return accumulator_; }

 private:
  EventSlice take(SliceTermination termination);

  int width_;
  int height_;
  int d_;
  int grid_w_;
  int grid_h_;
  double threshold_;
  std::int64_t max_duration_;
  std::size_t max_events_;
  double inv_sqrt_cells_;

  std::vector<std::uint8_t> accumulator_;
  std::vector<std::uint32_t> touched_;
  double mu_ = 0.0;
  double sigma_current_ = 0.0;
  double sigma_running_ = 0.0;
  std::uint64_t n_global_ = 0;
  std::vector<Event> pending_;
};

std::vector<EventSlice> adaptive_slice(const EventStream& stream, const PipelineConfig& config);

/// Slice k holds events with t in [k*window, (k+1)*window); empty windows are skipped.
std::vector<EventSlice> fixed_time_slice(const EventStream& stream, std::int64_t window_us);

/// Consecutive groups of exactly n events; the final partial group is tagged StreamEnd.
std::vector<EventSlice> fixed_count_slice(const EventStream& stream, std::size_t n);

EventFrame build_frame(const EventSlice& slice, int width, int height);

/// `slice_idx,t_start_us,t_end_us,n_events,termination`
void write_slice_report(std::span<const EventSlice> slices, const std::filesystem::path& path);

struct SliceBoundary {
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  std::size_t n_events = 0;
  SliceTermination termination = SliceTermination::StreamEnd;
};

std::vector<SliceBoundary> read_slice_report(const std::filesystem::path& path);

/// Rebuilds slices from a report: slices partition the stream in order, so
/// event counts alone locate every boundary.
std::vector<EventSlice> apply_slice_report(const EventStream& stream,
                                           std::span<const SliceBoundary> boundaries);

}  // namespace evpupil
