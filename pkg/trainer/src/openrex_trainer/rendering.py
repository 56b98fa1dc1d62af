"""Prompt rendering from the shared template fixture files.

The templates ship with the inference package; rendering from the same files
keeps training inputs byte-identical to the prompts the served model will
see at inference time.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

TEMPLATE_VERSION = "v1"

_FIELD = re.compile(r"\{(relations|demonstrations|text|head_entity|tail_entity)\}")


@lru_cache(maxsize=None)
def _template_segments(mode: str) -> tuple[tuple[str, str], ...]:
    ref = resources.files("openrex").joinpath(f"templates/{mode}_{TEMPLATE_VERSION}.txt")
    text = ref.read_text(encoding="utf-8").rstrip("\n")
    segments: list[tuple[str, str]] = []
    pos = 0
    for match in _FIELD.finditer(text):
        if match.start() > pos:
            segments.append(("lit", text[pos : match.start()]))
        segments.append(("field", match.group(1)))
        pos = match.end()
    if pos < len(text):
        segments.append(("lit", text[pos:]))
    return tuple(segments)


def render(mode: str, demos, text: str, head: str, tail: str) -> str:
    """Instantiate the ``rd`` or ``rp`` template.

    ``demos`` is a sequence of (text, head, tail, relation) tuples in prompt
    order.
    """
    blocks = "\n".join(
        f"text: {d_text}\nhead_entity: {d_head}\ntail_entity: {d_tail}\nrelationship: {d_rel}"
        for d_text, d_head, d_tail, d_rel in demos
    )
    values = {
        "relations": ", ".join(d[3] for d in demos),
        "demonstrations": blocks,
        "text": text,
        "head_entity": head,
        "tail_entity": tail,
    }
    return "".join(
        value if kind == "lit" else values[value]
        for kind, value in _template_segments(mode)
    )
