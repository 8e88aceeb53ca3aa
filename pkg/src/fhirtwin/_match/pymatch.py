"""Pure-Python matcher kernel: tokenization and dictionary span scanning.

This is the reference implementation of the two hot functions behind
dictionary entity extraction. A compiled twin lives in ``_speedups.pyx``
and must stay behaviorally identical; ``fhirtwin._match`` picks whichever
is importable.

Token rule: a character belongs to a token when it is alphanumeric, or
when it is ``/`` or ``.`` with digits on both sides (keeping ``145/92``
and ``2.5mg`` whole). Everything else separates tokens.

Dictionary keys are normalized the same way terminology lookup normalizes
queries: case-fold the verbatim slice and collapse whitespace runs. The
scanner builds candidate keys incrementally (token + separator at a time)
and prunes an n-gram as soon as its key stops being a prefix of any
dictionary key, which is what makes scanning large corpora cheap.
"""

from __future__ import annotations


def token_spans(text: str) -> list[tuple[int, int]]:
    """Return (start, end) offsets of every token in ``text``."""
    spans: list[tuple[int, int]] = []
    n = len(text)
    i = 0
    while i < n:
        ch = text[i]
        is_token_char = ch.isalnum() or (
            ch in "/." and 0 < i < n - 1 and text[i - 1].isdigit() and text[i + 1].isdigit()
        )
        if not is_token_char:
            i += 1
            continue
        start = i
        i += 1
        while i < n:
            ch = text[i]
            if ch.isalnum():
                i += 1
            elif ch in "/." and i + 1 < n and text[i - 1].isdigit() and text[i + 1].isdigit():
                i += 1
            else:
                break
        spans.append((start, i))
    return spans


def _collapse_whitespace(text: str) -> str:
    """Replace each whitespace run with a single space, keeping other chars."""
    parts: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            parts.append(" ")
            while i < n and text[i].isspace():
                i += 1
        else:
            parts.append(text[i])
            i += 1
    return "".join(parts)


def key_prefixes(keys) -> frozenset[str]:
    """Every dictionary key cut at each of its own token ends.

    A candidate key that is not in this set cannot grow into a full key by
    appending more tokens, so the scanner may stop extending it.
    """
    prefixes: set[str] = set()
    for key in keys:
        for _, end in token_spans(key):
            prefixes.add(key[:end])
    return frozenset(prefixes)


def dictionary_spans(
    text: str,
    spans: list[tuple[int, int]],
    keys: frozenset[str] | set[str],
    max_ngram: int,
) -> list[tuple[int, int]]:
    """All token n-gram spans (n <= max_ngram) whose normalized slice is a key.

    Returns every hit, ordered by (start, end); overlap resolution happens
    in the caller.
    """
    count = len(spans)
    if count == 0 or not keys or max_ngram <= 0:
        return []
    folded = [text[s:e].casefold() for s, e in spans]
    seps = [
        _collapse_whitespace(text[spans[k][1] : spans[k + 1][0]].casefold())
        for k in range(count - 1)
    ]
    prefixes = key_prefixes(keys)

    hits: list[tuple[int, int]] = []
    for i in range(count):
        key = folded[i]
        j = i
        while True:
            if key not in prefixes:
                break
            if key in keys:
                hits.append((spans[i][0], spans[j][1]))
            j += 1
            if j >= count or j - i >= max_ngram:
                break
            key = key + seps[j - 1] + folded[j]
    return hits
