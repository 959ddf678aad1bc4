// Copyright 2026 The dpforge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// O(n^2) pairwise AUC used as the test oracle for the rank implementation.

#ifndef DPFORGE_TESTS_ORACLES_AUC_ORACLE_HPP_
#define DPFORGE_TESTS_ORACLES_AUC_ORACLE_HPP_

#include <cstdint>
#include <vector>

namespace dpforge::testing {

inline double BruteForceAuc(const std::vector<double>& scores,
                            const std::vector<int32_t>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

}  // namespace dpforge::testing

#endif  // DPFORGE_TESTS_ORACLES_AUC_ORACLE_HPP_
