"""On-disk formats: chain JSON, trajectory and sample JSONL, pairings, truth files, result CSV.

State and symbol labels are 1-based on disk and 0-based in memory; the
conversion happens here and nowhere else.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .counterfactual import CounterfactualPairing
from .markov import MarkovChain, validate_chain
from .oracle import ScenarioTruth
from .regulatory import FeedBatch

CSV_COLUMNS = ("scenario_id", "tester", "trials", "yes_rate", "se", "seed")


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def blob_sha1(data: bytes) -> str:
    """Content hash as computed by ``git hash-object``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_sha1(path) -> str:
    return blob_sha1(Path(path).read_bytes())


def chain_to_json(chain: MarkovChain) -> dict:
    return {"n": chain.n, "rows": chain.tolist()}


def chain_from_json(d: dict, allow_reducible: bool = False) -> MarkovChain:
    chain = validate_chain(d["rows"], allow_reducible=allow_reducible)
    if "n" in d and int(d["n"]) != chain.n:
        raise ValueError(f"chain declares n={d['n']} but has {chain.n} rows")
    return chain


def save_chain(path, chain: MarkovChain) -> None:
    write_json(path, chain_to_json(chain))


def load_chain(path, allow_reducible: bool = False) -> MarkovChain:
    return chain_from_json(read_json(path), allow_reducible)


def _jsonl(path) -> Iterable[dict]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc.msg}") from None


def write_trajectories(path, batches: Sequence[FeedBatch]) -> None:
    with open(path, "w") as fh:
        for b in batches:
            for j, t in enumerate(b.trajectories):
                rec = {"user": b.user, "world": b.world, "traj_index": j, "states": (t.states + 1).tolist()}
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_trajectories(path, n: int) -> dict[str, list[FeedBatch]]:
    """Batches keyed by world, each list ordered by user id; trajectories ordered by ``traj_index``."""
    groups = defaultdict(dict)
    for rec in _jsonl(path):
        states = np.asarray(rec["states"], dtype=np.int64)
        if states.size and (states.min() < 1 or states.max() > n):
            raise ValueError(f"{path}: user {rec['user']} has state labels outside [1, {n}]")
        key = (rec["world"], int(rec["user"]))
        idx = int(rec["traj_index"])
        if idx in groups[key]:
            raise ValueError(f"{path}: duplicate trajectory {idx} for user {key[1]} in world {key[0]}")
        groups[key][idx] = states - 1
    out = defaultdict(list)
    for (world, user), trajs in sorted(groups.items()):
        out[world].append(FeedBatch(user=user, world=world, trajectories=tuple(trajs[i] for i in sorted(trajs)), n=n))
    return dict(out)


def write_samples(path, samples_p: Sequence[tuple], samples_q: Sequence[tuple]) -> None:
    with open(path, "w") as fh:
        for world, samples in (("P", samples_p), ("Q", samples_q)):
            for u, halves in enumerate(samples):
                for h, symbols in enumerate(halves, 1):
                    rec = {"u": u, "world": world, "half": h, "symbols": (np.asarray(symbols) + 1).tolist()}
                    fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_samples(path, n: int) -> tuple[list[tuple], list[tuple]]:
    """``(samples_p, samples_q)``: per pair index, the two halves as 0-based arrays."""
    found = {}
    for rec in _jsonl(path):
        sym = np.asarray(rec["symbols"], dtype=np.int64)
        if sym.size and (sym.min() < 1 or sym.max() > n):
            raise ValueError(f"{path}: pair {rec['u']} has symbols outside [1, {n}]")
        if rec["world"] not in ("P", "Q") or rec["half"] not in (1, 2):
            raise ValueError(f"{path}: bad world/half in record for pair {rec['u']}")
        found[(rec["world"], int(rec["u"]), rec["half"])] = sym - 1
    pairs = sorted({u for _, u, _ in found})
    if pairs != list(range(len(pairs))):
        raise ValueError(f"{path}: pair indices must be 0..U-1, got {pairs}")
    missing = [k for u in pairs for w in "PQ" for h in (1, 2) if (k := (w, u, h)) not in found]
    if missing:
        raise ValueError(f"{path}: missing sample sets {missing}")
    return ([(found["P", u, 1], found["P", u, 2]) for u in pairs],
            [(found["Q", u, 1], found["Q", u, 2]) for u in pairs])


def save_pairing(path, pairing: CounterfactualPairing) -> None:
    write_json(path, {"pairs": [list(p) for p in pairing.pairs]})


def load_pairing(path) -> CounterfactualPairing:
    return CounterfactualPairing(tuple(tuple(p) for p in read_json(path)["pairs"]))


def save_truth(path, truth: ScenarioTruth) -> None:
    write_json(path, truth.to_json())


def load_truth(path) -> ScenarioTruth:
    return ScenarioTruth.from_json(read_json(path))


def append_results(path, rows: Iterable[dict]) -> None:
    """Append rows to the result CSV, writing the header if the file is new or empty."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if fresh:
            w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in CSV_COLUMNS})
