#pragma once

// Seeded synthetic fixtures: activation streams for the detector and a
// Gaussian-mixture classification task for compression runs.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "specgeo/dense_net.hpp"
#include "specgeo/formats.hpp"
#include "specgeo/recurrent_head.hpp"
#include "specgeo/stream_window.hpp"

namespace specgeo {

struct StreamSpec {
    std::size_t steps = 64;
    std::size_t width = 128;
    bool structured = false;
    // structured streams: spike strength (population variance multiple of the
    // noise) decays from ell_start to 1 over the stream
    std::size_t spikes = 2;
    double ell_start = 6.0;
    double sigma2 = 1.0;
};

/// T x D float rows. Noise streams are i.i.d. N(0, sigma2); structured streams
/// carry `spikes` fixed random directions whose variance fades into the bulk.
ActivationContainer generate_stream(const StreamSpec& spec, std::uint64_t seed);

struct DetectionFixtureSpec {
    std::size_t sequences = 400;
    std::size_t steps = 64;
    std::size_t width = 32;
    WindowConfig window{32, 2, {}};
    double ell_min = 3.0;
    double ell_max = 10.0;
    std::size_t max_spikes = 3;
    double sigma2_min = 0.5;
    double sigma2_max = 2.0;
};

/// Balanced structured (label 1) vs noise (label 0) descriptor sequences with
/// per-sequence random noise level, spike count and strength.
std::vector<LabeledSequence> detection_fixture(const DetectionFixtureSpec& spec, std::uint64_t seed);

/// Descriptor-level fixture: Gaussian slot values with slot 7 (entropy) at +10
/// for positives and -10 for negatives.
std::vector<LabeledSequence> separable_fixture(std::size_t count, std::size_t steps, std::uint64_t seed);

struct MixtureSpec {
    std::size_t classes = 10;
    std::size_t dim = 32;
    double separation = 0.8;  // stddev of class means per coordinate, noise is unit
    std::size_t n_train = 4000;
    std::size_t n_validation = 1000;
    std::size_t n_test = 2000;
};

struct MixtureTask {
    Dataset train;
    Dataset validation;
    Dataset test;
};

MixtureTask gaussian_mixture(const MixtureSpec& spec, std::uint64_t seed);

}  // namespace specgeo
