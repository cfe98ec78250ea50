"""
Parsing for threshold grid strings.

The sweep command takes α and β grids on the command line in one of three
forms:

- ``start:step:stop``: an inclusive arithmetic range, e.g. ``0:0.1:0.3``.
- ``a,b,c``: an explicit list.
- ``x``: a single value.

Parse via this helper at the CLI boundary and let the caller decide how to
report a failure.
"""

import math


def _number(text: str, grid: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ValueError(f"non-numeric component {text!r} in grid {grid!r}") from exc
    if not math.isfinite(value):
        raise ValueError(f"non-finite component {text!r} in grid {grid!r}")
    return value


def parse_grid(grid: str) -> tuple[float, ...]:
    """
    Parse a grid string into an ascending tuple of floats.

    Raises ``ValueError`` for any malformed input: empty strings, non-numeric
    parts, a non-positive step, or a range whose stop precedes its start.
    Range endpoints are included; values are rounded to 12 decimals so
    ``0:0.1:0.3`` yields ``(0.0, 0.1, 0.2, 0.3)`` and not ``0.30000000000000004``.
    """
    if not isinstance(grid, str) or not grid.strip():
        raise ValueError("grid must be a non-empty string")

    text = grid.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range grid must be start:step:stop, got {grid!r}")
        start, step, stop = (_number(p, grid) for p in parts)
        if step <= 0:
            raise ValueError(f"grid step must be positive in {grid!r}")
        if stop < start:
            raise ValueError(f"grid stop precedes start in {grid!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + n * step, 12) for n in range(count))

    values = [_number(p.strip(), grid) for p in text.split(",")]
    return tuple(sorted(set(values)))
