"""Flat key=value text format used for configs, model data, reports and manifests.

One `dotted.key = value` assignment per line, `#` starts a comment, blank
lines are ignored.  Values are kept as strings here; typed interpretation
is the caller's job.  Chosen over nested formats for diff-friendliness.
"""

from __future__ import annotations


class KVError(ValueError):
    """Malformed key=value text."""


def parse_kv_text(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse flat key=value lines into an ordered dict of raw strings."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise KVError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise KVError(f"{source}:{lineno}: empty key")
        if key in out:
            raise KVError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_kv_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read(), source=str(path))


def format_kv(pairs: dict[str, object]) -> str:
    """Render pairs as canonical key=value text (insertion order preserved)."""
    lines = [f"{key} = {value}" for key, value in pairs.items()]
    return "\n".join(lines) + "\n"
