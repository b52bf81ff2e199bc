"""Deterministic synthetic Java-method corpora.

Two generators: the bundled desk-scale corpus with a controlled
shared-token distribution across buckets {0,1,2,3,>=4}, and a separable
corpus where keyword labels follow a plantable lexical marker (identifiers
carrying the `key` subtoken), used to sanity-check extractor training.
"""
from __future__ import annotations

import json

import numpy as np

from .codegraph import MethodRecord

ACTIONS = ["load", "save", "read", "write", "find", "count", "merge", "sort",
           "parse", "copy", "clear", "build", "check", "send", "open", "close"]
OBJECTS = ["file", "name", "list", "node", "item", "user", "data", "index",
           "value", "buffer", "token", "graph", "map", "entry", "text", "line"]
QUALIFIERS = ["all", "next", "first", "last", "total", "local", "remote", "batch"]
FILLERS = ["res", "val", "out"]
# decoy identifiers, disjoint from the name pools above
DECOYS = ["arg", "input", "limit", "ctx", "cfg", "env", "src", "pos",
          "idx", "cnt", "obj", "ref", "tmp", "acc", "cur", "num"]

_BUCKET_WEIGHTS = {0: 10, 1: 25, 2: 30, 3: 20, 4: 15}  # per 100 methods


def camel(subtokens: list[str]) -> str:
    return subtokens[0] + "".join(s.capitalize() for s in subtokens[1:])


def _gibberish(rng: np.random.Generator) -> str:
    return "".join(chr(ord("a") + int(c)) for c in rng.integers(0, 26, size=5)) + "zq"


def _make_body(name: str, subs: list[str], planted: list[str],
               rng: np.random.Generator) -> str:
    filler = FILLERS[int(rng.integers(0, len(FILLERS)))]
    # sometimes hide one shared subtoken in the side-variable slot; when it
    # is not hidden there, the slot holds a same-pool token that is NOT in
    # the name, so neither surface nor position can reveal the label
    side_token = None
    main_planted = list(planted)
    if main_planted and rng.random() < 0.4:
        side_token = main_planted.pop()
    if main_planted:
        main = camel(main_planted + [filler])
    else:
        main = camel([DECOYS[int(rng.integers(0, len(DECOYS)))], filler])
    if side_token is None:
        side_token = _pick(rng, ACTIONS + OBJECTS, set(subs) | set(planted))
    side = camel([side_token, "buf"])
    if main == name:  # the declared name gets masked; keep the signal visible
        main = camel(planted + [filler, "x"])
    a1 = DECOYS[int(rng.integers(0, len(DECOYS)))]
    a2 = DECOYS[int(rng.integers(0, len(DECOYS)))]
    while a2 == a1:
        a2 = DECOYS[int(rng.integers(0, len(DECOYS)))]
    gib = _gibberish(rng)
    helper = camel([a1, "util"])
    template = int(rng.integers(0, 3))
    if template == 0:
        return (
            f"public int {name}(int {a1}, String {a2}) {{\n"
            f"    int {main} = {helper}.compute({a1});\n"
            f"    String {gib} = {a2};\n"
            f"    int {side} = trace({gib});\n"
            f"    if ({main} > {side}) {{ {main} = {main} + 1; }}\n"
            f"    return {main};\n"
            f"}}"
        )
    if template == 1:
        return (
            f"public String {name}(String {a1}, int {a2}) {{\n"
            f"    String {main} = {a1};\n"
            f"    int {gib} = {a2};\n"
            f"    String {side} = {a1};\n"
            f"    while ({gib} > 0) {{ {gib} = {gib} - 1; {main} = trim({main}, {side}); }}\n"
            f"    return {main};\n"
            f"}}"
        )
    return (
        f"public long {name}(long {a1}, long {a2}) {{\n"
        f"    long {main} = {a1} + {a2};\n"
        f"    long {gib} = {a1} * 2;\n"
        f"    long {side} = trace({gib});\n"
        f"    {main} = {helper}.adjust({main}, {side});\n"
        f"    return {main};\n"
        f"}}"
    )


def _pick(rng: np.random.Generator, pool: list[str], exclude: set[str]) -> str:
    choices = [p for p in pool if p not in exclude]
    return choices[int(rng.integers(0, len(choices)))]


def generate_record(bucket: int, rng: np.random.Generator, uid: str) -> MethodRecord:
    name_len = {0: 2, 1: 2, 2: 2, 3: 3, 4: 4}[bucket]
    used: set[str] = set()
    subs = [_pick(rng, ACTIONS, used)]
    used.add(subs[0])
    subs.append(_pick(rng, OBJECTS, used))
    used.add(subs[1])
    while len(subs) < name_len:
        nxt = _pick(rng, OBJECTS + QUALIFIERS, used)
        subs.append(nxt)
        used.add(nxt)
    planted = subs[:bucket]
    body = _make_body(camel(subs), subs, planted, rng)
    return MethodRecord(body=body, name_subtokens=subs, project="toy",
                        method_id=uid)


def generate_toy_corpus(n: int = 200, seed: int = 11) -> list[MethodRecord]:
    rng = np.random.default_rng(seed)
    buckets: list[int] = []
    for b, w in _BUCKET_WEIGHTS.items():
        buckets.extend([b] * round(n * w / 100))
    while len(buckets) < n:
        buckets.append(2)
    buckets = buckets[:n]
    records = []
    for i, b in enumerate(buckets):
        records.append(generate_record(b, rng, uid=f"toy{i:04d}"))
    # stratified split: within each bucket 70/15/15
    by_bucket: dict[int, list[MethodRecord]] = {}
    for rec, b in zip(records, buckets):
        by_bucket.setdefault(b, []).append(rec)
    for recs in by_bucket.values():
        m = len(recs)
        n_valid = max(1, round(0.15 * m))
        n_test = max(1, round(0.15 * m))
        for j, rec in enumerate(recs):
            if j < m - n_valid - n_test:
                rec.split = "train"
            elif j < m - n_test:
                rec.split = "valid"
            else:
                rec.split = "test"
    return records


def generate_separable_corpus(n: int = 80, seed: int = 7) -> list[MethodRecord]:
    """Keywords follow a lexical marker: name subtokens are exactly the
    non-marker subtokens of identifiers that carry the `key` marker."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        used: set[str] = set()
        a = _pick(rng, ACTIONS, used)
        used.add(a)
        o = _pick(rng, OBJECTS, used)
        marked_a = camel(["key", a])
        marked_o = camel(["key", o])
        d1 = _pick(rng, DECOYS, set())
        d2 = _pick(rng, DECOYS, {d1})
        body = (
            f"public int helper{i}(int {d1}, int {d2}) {{\n"
            f"    int {marked_a} = {d1} + 1;\n"
            f"    int {marked_o} = {d2} + {marked_a};\n"
            f"    int {camel([d1, 'tmp'])} = {marked_o};\n"
            f"    return {camel([d1, 'tmp'])};\n"
            f"}}"
        )
        rec = MethodRecord(body=body, name_subtokens=[a, o], project="separable",
                           method_id=f"sep{i:04d}")
        rec.split = "train" if i < int(n * 0.8) else "valid"
        records.append(rec)
    return records


def write_records(path, records: list[MethodRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "id": rec.method_id,
                "body": rec.body,
                "name_subtokens": rec.name_subtokens,
                "project": rec.project,
                "split": rec.split,
            }, sort_keys=True) + "\n")
