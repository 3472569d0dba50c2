#pragma once

#include <stdexcept>
#include <string>

namespace amin {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class SizeError : public Error {
public:
    using Error::Error;
};

// Pixel values outside the unit interval.
class RangeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DecodeError : public Error {
public:
    using Error::Error;
};

class PairDimensionError : public Error {
public:
    using Error::Error;
};

class CropSizeError : public Error {
public:
    using Error::Error;
};

class NumericsError : public Error {
public:
    using Error::Error;
};

class CheckpointVersionError : public Error {
public:
    using Error::Error;
};

}  // namespace amin
