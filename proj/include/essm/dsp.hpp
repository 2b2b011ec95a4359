#pragma once

#include <cstddef>
#include <vector>

namespace essm::ingest {

/// Rational polyphase resampling (up L, down M with L/M = fs_out/fs_in in
/// lowest terms) through a Kaiser-windowed sinc low-pass (beta 8.6, cutoff
/// 0.9 * min(fs_in, fs_out)/2). Each polyphase branch is normalized to unit
/// sum, so DC gain is exactly 1 away from the edges. Output length is
/// floor(n * fs_out / fs_in); samples beyond the input are treated as zero.
std::vector<double> resample(const std::vector<double>& x, std::size_t fs_in,
                             std::size_t fs_out);

/// Cascade of second-order IIR notches (RBJ biquads) at the given
/// frequencies, each applied forward-backward (zero phase) with steady-state
/// edge initialization. Every frequency must lie below fs/2.
std::vector<double> notch_filter(const std::vector<double>& x, double fs,
                                 const std::vector<double>& freqs, double q = 30.0);

}  // namespace essm::ingest
