"""ISO-639 language code validation."""

from __future__ import annotations

import functools

import pycountry

AUTO = "auto"


@functools.lru_cache(maxsize=None)
def is_iso639(code: str) -> bool:
    """True for registered ISO-639-1/2/3 codes.

    A region subtag (``zh-CN``, ``pt_BR``) is accepted as long as the primary
    subtag is registered, since translation services commonly expect them.
    """
    if not code:
        return False
    primary = code.replace("_", "-").split("-", 1)[0].lower()
    if len(primary) == 2:
        return pycountry.languages.get(alpha_2=primary) is not None
    if len(primary) == 3:
        return (
            pycountry.languages.get(alpha_3=primary) is not None
            or pycountry.languages.get(bibliographic=primary) is not None
        )
    return False


def check_code(code: str, *, allow_auto: bool = False) -> str:
    if allow_auto and code == AUTO:
        return code
    if not is_iso639(code):
        raise ValueError(f"not a registered ISO-639 code: {code!r}")
    return code
