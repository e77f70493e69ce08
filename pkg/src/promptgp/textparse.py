"""Lenient extraction of dict-shaped answers from raw LLM output."""

from __future__ import annotations

import ast
import json
from typing import Optional


def balanced_spans(text: str) -> list[tuple[int, int]]:
    """All balanced {...} spans (nested included), sorted by start position.

    Braces inside single- or double-quoted strings are ignored; an
    unterminated quote falls back to plain brace counting from that point.
    """
    spans = []
    stack = []
    quote = None
    escaped = False
    for i, ch in enumerate(text):
        if quote is not None:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote or ch == "\n":
                quote = None
            continue
        if ch in "'\"":
            quote = ch
        elif ch == "{":
            stack.append(i)
        elif ch == "}" and stack:
            spans.append((stack.pop(), i + 1))
    spans.sort()
    return spans


def parse_objectish(text: str) -> Optional[dict]:
    """Parse a JSON object, falling back to Python-literal syntax."""
    try:
        obj = json.loads(text)
    except ValueError:
        try:
            obj = ast.literal_eval(text)
        except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
            return None
    return obj if isinstance(obj, dict) else None


def extract_key(text: str, key: str) -> Optional[str]:
    """Value of `key` (case-insensitive) in the last parseable {...} span."""
    wanted = key.lower()
    for start, end in reversed(balanced_spans(text)):
        obj = parse_objectish(text[start:end])
        if obj is None:
            continue
        for k, v in obj.items():
            if isinstance(k, str) and k.lower() == wanted:
                return v.strip() if isinstance(v, str) else str(v)
    return None
