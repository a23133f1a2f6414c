#pragma once

#include <stdexcept>
#include <string>

namespace weavecache {

/// Base of every domain error raised by the library. The CLI maps these to
/// exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define WEAVECACHE_DEFINE_ERROR(Name)       \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

WEAVECACHE_DEFINE_ERROR(DimensionError);
WEAVECACHE_DEFINE_ERROR(ZeroNormError);
WEAVECACHE_DEFINE_ERROR(EmptyInputError);
WEAVECACHE_DEFINE_ERROR(InvalidDistributionError);
WEAVECACHE_DEFINE_ERROR(InvalidParameterError);
WEAVECACHE_DEFINE_ERROR(TimeOrderError);
WEAVECACHE_DEFINE_ERROR(EmptyMemoryError);
WEAVECACHE_DEFINE_ERROR(ShapeError);
WEAVECACHE_DEFINE_ERROR(ConfigError);
WEAVECACHE_DEFINE_ERROR(ParseError);

#undef WEAVECACHE_DEFINE_ERROR

}  // namespace weavecache
