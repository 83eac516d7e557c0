#pragma once

#include <stdexcept>
#include <string>

namespace fedshot {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- audio / feature extraction ---
struct ClipTooShort : Error { using Error::Error; };
struct NonFiniteInput : Error { using Error::Error; };
struct RateMismatch : Error { using Error::Error; };
struct NoiseTooShort : Error { using Error::Error; };

// --- tensor engine ---
struct ShapeMismatch : Error { using Error::Error; };
struct NotScalar : Error { using Error::Error; };
struct DetachedGraph : Error { using Error::Error; };
struct MissingGrad : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };

// --- layers ---
struct BadRatio : Error { using Error::Error; };
struct KernelTooLarge : Error { using Error::Error; };
struct InputTooSmall : Error { using Error::Error; };

// --- episodic engine ---
struct InsufficientClasses : Error { using Error::Error; };
struct InsufficientSamplesPerClass : Error { using Error::Error; };
struct EmptyClass : Error { using Error::Error; };
struct EmbedDimMismatch : Error { using Error::Error; };

// --- federation / wire protocol ---
struct StructureMismatch : Error { using Error::Error; };
struct ZeroTotalTasks : Error { using Error::Error; };
struct BadMagic : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct TruncatedPayload : Error { using Error::Error; };
struct ChecksumMismatch : Error { using Error::Error; };
struct ClientTimeout : Error { using Error::Error; };
struct TransportError : Error { using Error::Error; };

// --- dataset handling ---
struct InsufficientSamplesForSplit : Error { using Error::Error; };
struct UnknownLabel : Error { using Error::Error; };
struct PairNotDistinct : Error { using Error::Error; };
struct SpecOverlap : Error { using Error::Error; };

// --- metrics ---
struct EmptyInput : Error { using Error::Error; };

// --- configuration / IO ---
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };

}  // namespace fedshot
