#!/usr/bin/env python3
"""Benchmark the matcher kernel: compiled extension vs pure Python.

Builds a deterministic corpus from the bundled synthesizer fixtures and
times tokenization plus dictionary span scanning through both backends.

    python benchmarks/bench_matcher.py [--target-chars 2000000] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

from fhirtwin._match import pymatch
from fhirtwin.pipeline import Pipeline, build_config, default_data_dir
from fhirtwin.synthesizer import load_records, load_templates, synthesize

try:
    from fhirtwin._match import _speedups
except ImportError:
    _speedups = None


def build_corpus_text(target_chars: int) -> tuple[str, Pipeline]:
    config = build_config()
    pipeline = Pipeline(config)
    templates = load_templates(config.templates)
    notes = [
        synthesize(r, templates, pipeline.index, config.default_timestamp).note.text
        for r in load_records(default_data_dir() / "tables")
    ]
    chunk = " ".join(notes)
    repeats = max(1, target_chars // len(chunk))
    return " ".join([chunk] * repeats), pipeline


def bench(fn, repeats: int):
    best = float("inf")
    result = None
    for _ in range(repeats):
        started = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - started)
    return best, result


def run(backend_name: str, impl, text: str, keys, max_ngram: int, repeats: int):
    tokenize_s, spans = bench(lambda: impl.token_spans(text), repeats)
    scan_s, hits = bench(
        lambda: impl.dictionary_spans(text, spans, keys, max_ngram), repeats
    )
    total = tokenize_s + scan_s
    print(
        f"{backend_name:<10} tokenize {tokenize_s * 1e3:8.1f} ms   "
        f"scan {scan_s * 1e3:8.1f} ms   total {total * 1e3:8.1f} ms   "
        f"({len(text) / total / 1e6:6.1f} MB/s, {len(hits)} hits)"
    )
    return total, spans, hits


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--target-chars", type=int, default=2_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    text, pipeline = build_corpus_text(args.target_chars)
    keys = pipeline.index.match_keys()
    print(
        f"corpus: {len(text):,} chars, {len(keys)} dictionary keys, "
        f"max n-gram {pipeline.config.max_ngram}"
    )

    py_total, py_spans, py_hits = run(
        "python", pymatch, text, keys, pipeline.config.max_ngram, args.repeats
    )
    if _speedups is None:
        print("compiled kernel not built; run pip install -e . to compare")
        return
    c_total, c_spans, c_hits = run(
        "compiled", _speedups, text, keys, pipeline.config.max_ngram, args.repeats
    )
    assert c_spans == py_spans and c_hits == py_hits, "backend outputs diverged"
    print(f"speedup: {py_total / c_total:.2f}x (outputs identical)")


if __name__ == "__main__":
    main()
