// Copyright 2026 The Foley Bridge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FOLEY_TESTS_TEST_UTIL_H_
#define FOLEY_TESTS_TEST_UTIL_H_

#include <functional>

#include "gtest/gtest.h"

#include "foley/common.h"

namespace foley::testing {

// Passes iff fn throws FoleyError with the given code.
inline ::testing::AssertionResult ThrowsCode(const std::function<void()>& fn,
                                             ErrorCode code) {
  try {
    fn();
  } catch (const FoleyError& e) {
    if (e.code() == code) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure()
           << "threw " << ErrorCodeName(e.code()) << ": " << e.what();
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure() << "threw non-FoleyError " << e.what();
  }
  return ::testing::AssertionFailure() << "did not throw";
}

inline double MaxAbsDiff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace foley::testing

#endif  // FOLEY_TESTS_TEST_UTIL_H_
