#pragma once

#include "hvr/homog.hpp"
#include "hvr/mc.hpp"

namespace hvr {

struct AntitheticSample {
  std::size_t index = 0;
  HomogenizedMatrix a;        // A*_N of the drawn field
  HomogenizedMatrix b;        // A*_N of its antithetic field
  HomogenizedMatrix average;  // (a + b) / 2
};

/// Entrywise mean of two homogenized matrices.
HomogenizedMatrix pair_average(const HomogenizedMatrix& a, const HomogenizedMatrix& b);

/// Both members of a pair solved from one latent draw.
AntitheticSample antithetic_sample(const FieldSpec& spec, int N, int r, std::uint64_t master_seed, std::size_t index,
                                   const SolveOptions& options = {});

/// Antithetic estimator over `pairs` pairs; 2 d pairs corrector solves, cost
/// matched to plain MC with M = 2 pairs. Entries of the sample table hold
/// A*_N(A^m); aux columns hold B*_N(B^m) ("b_ij") and the pair averages
/// ("avg_ij"), which are the estimator samples.
std::pair<EstimatorReport, SampleTable> run_antithetic(const FieldSpec& spec, int N, int r, std::size_t pairs,
                                                       std::uint64_t master_seed, const SolveOptions& options = {});

}  // namespace hvr
