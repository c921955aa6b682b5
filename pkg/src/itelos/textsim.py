"""Identifier canonicalization and name similarity."""
from __future__ import annotations

import re

_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")
_SEPARATORS = re.compile(r"[_\-\s]+")


def canon(name: str) -> str:
    """Lowercase, split on ``_``/``-``/whitespace/camelCase, rejoin with ``_``.

    >>> canon("countriesAndTerritories")
    'countries_and_territories'
    >>> canon("number_of_RSA_case")
    'number_of_rsa_case'
    """
    parts: list[str] = []
    for chunk in _SEPARATORS.split(name):
        parts.extend(p for p in _CAMEL.split(chunk) if p)
    return "_".join(p.lower() for p in parts)


def tokens(name: str) -> frozenset[str]:
    return frozenset(t for t in canon(name).split("_") if t)


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def containment(a: str, b: str) -> float:
    ta, tb = tokens(a), tokens(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / min(len(ta), len(tb))


def jaccard(a: str, b: str) -> float:
    ta, tb = tokens(a), tokens(b)
    union = ta | tb
    return len(ta & tb) / len(union) if union else 0.0


def edit_similarity(a: str, b: str) -> float:
    """``1 - levenshtein / max(len)`` over the canonical forms."""
    ca, cb = canon(a), canon(b)
    longest = max(len(ca), len(cb))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(ca, cb) / longest


def name_similarity(a: str, b: str) -> float:
    """Best of token containment, token Jaccard and edit similarity."""
    return max(containment(a, b), jaccard(a, b), edit_similarity(a, b))
