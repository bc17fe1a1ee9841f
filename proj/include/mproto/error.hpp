#pragma once

#include <stdexcept>
#include <string>

namespace mproto {

// Every failure the engine reports derives from Error so callers can catch
// one type at the CLI boundary.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MPROTO_DEFINE_ERROR(Name)                 \
    class Name : public Error {                   \
    public:                                       \
        using Error::Error;                       \
    }

MPROTO_DEFINE_ERROR(ShapeError);
MPROTO_DEFINE_ERROR(EmptyMaskError);
MPROTO_DEFINE_ERROR(InsufficientPixelsError);
MPROTO_DEFINE_ERROR(EmptySupportError);
MPROTO_DEFINE_ERROR(EmptyBankError);
MPROTO_DEFINE_ERROR(LabelError);
MPROTO_DEFINE_ERROR(DivergenceError);
MPROTO_DEFINE_ERROR(FormatError);
MPROTO_DEFINE_ERROR(EpisodeError);
MPROTO_DEFINE_ERROR(SpecError);
MPROTO_DEFINE_ERROR(ConfigError);

#undef MPROTO_DEFINE_ERROR

}  // namespace mproto
