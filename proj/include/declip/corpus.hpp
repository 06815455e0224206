// Procedural stand-ins for music and speech recordings, used when no real
// corpus is at hand. Output is written as ordinary WAV files and goes through
// the same ingestion path as recorded audio.

#pragma once

#include "declip/data.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace declip {

enum class CorpusKind { Music, Speech };

CorpusKind corpus_kind_from_string(const std::string& s);

// Polyphonic tonal material: notes from a diatonic scale, harmonic partials
// with piano-like exponential decay or bowed attack and vibrato, phrase-level
// dynamics.
Signal synth_music(double seconds, int sample_rate, Rng& rng);

// Voiced syllables (jittered glottal pulse train through three vowel formant
// resonators), fricative noise bursts, and pauses.
Signal synth_speech(double seconds, int sample_rate, Rng& rng);

// Writes `files` WAVs named <prefix>_NNN.wav into `dir` and returns their paths.
std::vector<std::filesystem::path> write_corpus(CorpusKind kind, const std::filesystem::path& dir,
                                                const std::string& prefix, int files, double seconds,
                                                int sample_rate, std::uint64_t seed);

}  // namespace declip
