#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace urec {

using Index = std::ptrdiff_t;

struct Error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent on-disk data.
struct FormatError : Error
{
  using Error::Error;
};

struct IoError : Error
{
  using Error::Error;
};

struct ShapeError : Error
{
  using Error::Error;
};

// Caller supplied a value outside the documented domain.
struct ArgumentError : Error
{
  using Error::Error;
};

} // namespace urec
