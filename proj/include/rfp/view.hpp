#pragma once

#include <array>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace rfp {

enum class View { sagittal = 0, coronal = 1, axial = 2 };

inline constexpr std::array<View, 3> kViews{View::sagittal, View::coronal, View::axial};

inline std::string_view view_name(View v)
{
    switch (v) {
    case View::sagittal: return "sagittal";
    case View::coronal: return "coronal";
    case View::axial: return "axial";
    }
    return "?";
}

inline View parse_view(std::string_view s)
{
    for (View v : kViews)
        if (view_name(v) == s) return v;
    throw ValidationError("unknown view '" + std::string(s) + "'");
}

} // namespace rfp
