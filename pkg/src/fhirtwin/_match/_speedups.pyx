# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled matcher kernel.

Behaviorally identical to ``fhirtwin._match.pymatch``; the parity test
suite runs both implementations against each other. The algorithm is the
same (incremental key building with prefix pruning); only loop mechanics
and character probes compile down to C.
"""


def token_spans(str text):
    """Return (start, end) offsets of every token in ``text``."""
    cdef Py_ssize_t n = len(text)
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t start
    cdef Py_UCS4 ch
    cdef bint is_token_char
    spans = []
    while i < n:
        ch = text[i]
        is_token_char = ch.isalnum() or (
            (ch == u"/" or ch == u".")
            and 0 < i < n - 1
            and text[i - 1].isdigit()
            and text[i + 1].isdigit()
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
            elif (
                (ch == u"/" or ch == u".")
                and i + 1 < n
                and text[i - 1].isdigit()
                and text[i + 1].isdigit()
            ):
                i += 1
            else:
                break
        spans.append((start, i))
    return spans


cdef str _collapse_whitespace(str text):
    cdef Py_ssize_t n = len(text)
    cdef Py_ssize_t i = 0
    cdef Py_UCS4 ch
    parts = []
    while i < n:
        ch = text[i]
        if ch.isspace():
            parts.append(u" ")
            while i < n and text[i].isspace():
                i += 1
        else:
            parts.append(text[i])
            i += 1
    return u"".join(parts)


def key_prefixes(keys):
    """Every dictionary key cut at each of its own token ends."""
    prefixes = set()
    cdef Py_ssize_t end
    for key in keys:
        for _, end in token_spans(key):
            prefixes.add(key[:end])
    return frozenset(prefixes)


def dictionary_spans(str text, list spans, keys, Py_ssize_t max_ngram):
    """All token n-gram spans (n <= max_ngram) whose normalized slice is a key."""
    cdef Py_ssize_t count = len(spans)
    if count == 0 or not keys or max_ngram <= 0:
        return []
    cdef Py_ssize_t i, j, k, s, e
    folded = []
    for k in range(count):
        s = <Py_ssize_t> spans[k][0]
        e = <Py_ssize_t> spans[k][1]
        folded.append(text[s:e].casefold())
    seps = []
    for k in range(count - 1):
        e = <Py_ssize_t> spans[k][1]
        s = <Py_ssize_t> spans[k + 1][0]
        seps.append(_collapse_whitespace(text[e:s].casefold()))
    prefixes = key_prefixes(keys)

    hits = []
    cdef str key
    for i in range(count):
        key = <str> folded[i]
        j = i
        while True:
            if key not in prefixes:
                break
            if key in keys:
                hits.append((spans[i][0], spans[j][1]))
            j += 1
            if j >= count or j - i >= max_ngram:
                break
            key = key + <str> seps[j - 1] + <str> folded[j]
    return hits
