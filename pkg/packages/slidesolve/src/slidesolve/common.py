from typing import Mapping, Sequence, TypeVar


_T = TypeVar("_T")


def normalize_dict_keys(obj: _T) -> _T:
    """ Problem files may spell keys `gain-upper` or `gain_upper`; mapping keys are rewritten to the latter. """
    if isinstance(obj, Mapping):
        return {(k.replace("-", "_") if isinstance(k, str) else k): normalize_dict_keys(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize_dict_keys(v) for v in obj]
    return obj


def escape_json_path_pointer_token(token: str) -> str:
    # RFC 6901 escaping: "~" -> "~0", "/" -> "~1"
    return token.replace("~", "~0").replace("/", "~1")


def json_pointer(segments: Sequence[str | int]) -> str:
    """
    Render a field location (e.g. a pydantic error `loc`) as a JSON pointer: ("surface", "rows", 0) -> /surface/rows/0
    """
    if not segments:
        return ""
    parts: list[str] = []
    for seg in segments:
        if isinstance(seg, int):
            parts.append(str(seg))
        else:
            parts.append(escape_json_path_pointer_token(str(seg)))
    return "/" + "/".join(parts)
