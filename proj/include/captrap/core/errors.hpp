// Copyright 2026 The captrap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace captrap {

// Base of every error the toolkit raises. The CLI maps ConfigError to exit
// code 2 and everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CAPTRAP_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

CAPTRAP_DEFINE_ERROR(ParseError);
CAPTRAP_DEFINE_ERROR(ValidationError);
CAPTRAP_DEFINE_ERROR(GenerationError);
CAPTRAP_DEFINE_ERROR(DomainError);
CAPTRAP_DEFINE_ERROR(VocabularyError);
CAPTRAP_DEFINE_ERROR(TrainingError);
CAPTRAP_DEFINE_ERROR(PlacementError);
CAPTRAP_DEFINE_ERROR(InputError);
CAPTRAP_DEFINE_ERROR(SynthesisError);
CAPTRAP_DEFINE_ERROR(PlanError);
CAPTRAP_DEFINE_ERROR(MaterializationError);
CAPTRAP_DEFINE_ERROR(MetricError);
CAPTRAP_DEFINE_ERROR(EvaluationError);
CAPTRAP_DEFINE_ERROR(DefenseError);
CAPTRAP_DEFINE_ERROR(ConfigError);
CAPTRAP_DEFINE_ERROR(IoError);

#undef CAPTRAP_DEFINE_ERROR

}  // namespace captrap
