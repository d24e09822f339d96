/* Copyright 2026 The invseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "invseg/error.hpp"

namespace invseg {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kState: return "state";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kUndefinedMetric: return "undefined-metric";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace invseg
