#pragma once

#include <stdexcept>
#include <string>

namespace astbridge {

// Base of every error thrown by the library. Subclasses name the failure
// kind so callers can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ASTBRIDGE_DEFINE_ERROR(Name)          \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  };

// ast_interchange
ASTBRIDGE_DEFINE_ERROR(MalformedTree)
ASTBRIDGE_DEFINE_ERROR(OversizeTree)
ASTBRIDGE_DEFINE_ERROR(SchemaError)
ASTBRIDGE_DEFINE_ERROR(EmptyCorpus)
ASTBRIDGE_DEFINE_ERROR(DuplicateSnippet)

// label_unification
ASTBRIDGE_DEFINE_ERROR(EmptySignature)
ASTBRIDGE_DEFINE_ERROR(ProviderUnavailable)

// diff_core
ASTBRIDGE_DEFINE_ERROR(ShapeMismatch)
ASTBRIDGE_DEFINE_ERROR(NonFiniteValue)

// gmn_encoder
ASTBRIDGE_DEFINE_ERROR(UnknownLabel)

// training_tasks
ASTBRIDGE_DEFINE_ERROR(TooFewTasks)
ASTBRIDGE_DEFINE_ERROR(NonFiniteLoss)

// generic I/O and format problems (bad magic, truncated files)
ASTBRIDGE_DEFINE_ERROR(FormatError)

#undef ASTBRIDGE_DEFINE_ERROR

}  // namespace astbridge
