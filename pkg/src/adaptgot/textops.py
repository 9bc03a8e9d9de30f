"""Shared text splitting so sentiment and bag-of-words agree on tokens."""
from __future__ import annotations

import re

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list:
    """Lowercase tokens split on whitespace and punctuation."""
    return _TOKEN.findall(text.lower())
