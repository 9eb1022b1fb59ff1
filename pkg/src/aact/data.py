"""Synthetic procedural-activity videos and the binary dataset format.

Each activity is a Markov chain over actions. An activity fixes a random
ordering of the A actions; from the action at position j of that ordering the
chain moves to positions j+1, j+2, j+3 with decaying weights, so the next
action is predictable but not certain, and the same action has different
successors in different activities. Frame features are the action's
unit-norm class embedding plus isotropic Gaussian noise.

Dataset file layout (all little-endian)::

    header   7s  magic  b"AACTDS1"
             B   version (1)
             5I  d, A, M, N, k
             Q   example count
    record   f8[M*d]  x_o, row-major
             f8[N*d]  x_f, row-major
             I        a_o
             I        a_f
             I[N]     future frame labels
"""
from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .rng import Xoshiro256, splitmix64

MAGIC = b"AACTDS1"
VERSION = 1
_HEADER = struct.Struct("<7sB5IQ")


class DatasetError(ValueError):
    pass


@dataclass
class ActivityGrammar:
    num_activities: int
    num_actions: int
    d: int
    transition: np.ndarray  # (activities, A, A)
    start_dist: np.ndarray  # (activities, A)
    class_embeddings: np.ndarray  # (A, d)
    segment_len_range: tuple[int, int] = (4, 10)
    noise_sigma: float = 0.3
    seed: int = 0


@dataclass
class Geometry:
    d: int
    A: int
    M: int
    N: int
    k: int

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.d, self.A, self.M, self.N, self.k)


@dataclass
class AnticipationExample:
    x_o: np.ndarray
    x_f: np.ndarray
    a_o: int
    a_f: int
    future_frame_labels: np.ndarray
    geometry: Geometry


@dataclass
class AnticipationSet:
    """Stacked examples sharing one geometry."""

    geometry: Geometry
    x_o: np.ndarray  # (n, M, d)
    x_f: np.ndarray  # (n, N, d)
    a_o: np.ndarray  # (n,)
    a_f: np.ndarray  # (n,)
    future: np.ndarray  # (n, N)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x_o.shape[0]

    def subset(self, idx) -> AnticipationSet:
        idx = np.asarray(idx, dtype=np.int64)
        return AnticipationSet(
            self.geometry, self.x_o[idx], self.x_f[idx], self.a_o[idx], self.a_f[idx], self.future[idx], dict(self.meta)
        )

    def example(self, i: int) -> AnticipationExample:
        return AnticipationExample(
            self.x_o[i], self.x_f[i], int(self.a_o[i]), int(self.a_f[i]), self.future[i], self.geometry
        )

    @classmethod
    def from_examples(cls, examples, geometry: Geometry | None = None) -> AnticipationSet:
        examples = list(examples)
        if not examples:
            if geometry is None:
                raise DatasetError("an empty example list needs an explicit geometry")
            g = geometry
            return cls(
                g,
                np.zeros((0, g.M, g.d)),
                np.zeros((0, g.N, g.d)),
                np.zeros(0, np.int64),
                np.zeros(0, np.int64),
                np.zeros((0, g.N), np.int64),
            )
        g = geometry or examples[0].geometry
        for i, ex in enumerate(examples):
            if ex.geometry != g:
                raise DatasetError(f"example {i} geometry {ex.geometry} != {g}")
        return cls(
            g,
            np.stack([ex.x_o for ex in examples]).astype(np.float64),
            np.stack([ex.x_f for ex in examples]).astype(np.float64),
            np.array([ex.a_o for ex in examples], np.int64),
            np.array([ex.a_f for ex in examples], np.int64),
            np.stack([np.asarray(ex.future_frame_labels) for ex in examples]).astype(np.int64),
        )

    def equals(self, other: AnticipationSet) -> bool:
        """Bitwise equality of every array and the geometry."""
        if self.geometry != other.geometry:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(
                (self.x_o, self.x_f, self.a_o, self.a_f, self.future),
                (other.x_o, other.x_f, other.a_o, other.a_f, other.future),
            )
        )


# ---------------------------------------------------------------- grammar


def _unit_rows(rng: Xoshiro256, n: int, d: int) -> np.ndarray:
    e = rng.normal_array((n, d))
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def _min_pairwise_distance(e: np.ndarray) -> float:
    diff = e[:, None, :] - e[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    dist[np.diag_indices(len(e))] = np.inf
    return float(dist.min())


def build_grammar(
    num_activities: int,
    num_actions: int,
    d: int,
    seed: int,
    noise_sigma: float = 0.3,
    segment_len_range: tuple[int, int] = (4, 10),
    successor_weights: tuple[float, ...] = (0.6, 0.3, 0.1),
) -> ActivityGrammar:
    if num_actions < 2:
        raise ValueError(f"need at least 2 actions, got {num_actions}")
    if d < 2:
        raise ValueError(f"need feature dim >= 2, got {d}")
    if num_activities < 1:
        raise ValueError(f"need at least 1 activity, got {num_activities}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    lo, hi = segment_len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad segment length range {segment_len_range}")
    rng = Xoshiro256(seed)

    for _ in range(1000):
        emb = _unit_rows(rng, num_actions, d)
        if _min_pairwise_distance(emb) > 0.1:
            break
    else:
        raise ValueError(f"could not place {num_actions} separated embeddings in {d} dims")

    A = num_actions
    trans = np.zeros((num_activities, A, A))
    start = np.zeros((num_activities, A))
    for g in range(num_activities):
        order = rng.permutation(A)
        for j, action in enumerate(order):
            row = np.zeros(A)
            for step, w in enumerate(successor_weights, start=1):
                succ = order[(j + step) % A]
                if succ != action:
                    row[succ] += w
            trans[g, action] = row / row.sum()
        # first three actions of the ordering start the activity
        for j, w in enumerate((0.6, 0.3, 0.1)[: min(3, A)]):
            start[g, order[j]] += w
        start[g] /= start[g].sum()
    return ActivityGrammar(
        num_activities=num_activities,
        num_actions=A,
        d=d,
        transition=trans,
        start_dist=start,
        class_embeddings=emb,
        segment_len_range=(lo, hi),
        noise_sigma=float(noise_sigma),
        seed=seed,
    )


# ---------------------------------------------------------------- videos


@dataclass
class Video:
    labels: np.ndarray  # (T,)
    features: np.ndarray  # (T, d)
    activity: int

    def boundaries(self) -> list[int]:
        """Frame indices where a new segment starts (excluding frame 0)."""
        return [i for i in range(1, len(self.labels)) if self.labels[i] != self.labels[i - 1]]


def sample_video(grammar: ActivityGrammar, total_frames: int, activity: int, seed: int) -> Video:
    lo, hi = grammar.segment_len_range
    if not 0 <= activity < grammar.num_activities:
        raise IndexError(f"activity {activity} out of range [0, {grammar.num_activities})")
    if total_frames < lo:
        raise ValueError(f"total_frames {total_frames} shorter than the minimum segment {lo}")
    rng = Xoshiro256(seed)
    labels = np.empty(total_frames, dtype=np.int64)
    action = rng.choice(grammar.start_dist[activity])
    t = 0
    while t < total_frames:
        n = rng.randint(lo, hi)
        labels[t : t + n] = action
        t += n
        action = rng.choice(grammar.transition[activity, action])
    feats = grammar.class_embeddings[labels]
    if grammar.noise_sigma > 0:
        feats = feats + rng.normal_array(feats.shape, grammar.noise_sigma)
    return Video(labels=labels, features=np.ascontiguousarray(feats), activity=activity)


def majority_label(labels) -> int:
    """Most frequent label; ties go to the label that occurs first."""
    labels = [int(v) for v in labels]
    counts: dict[int, int] = {}
    for v in labels:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    return next(v for v in labels if counts[v] == best)


def make_example(video: Video, t: int, geometry: Geometry) -> AnticipationExample:
    """Observed frames [t, t+M), future frames [t+M+k, t+M+k+N)."""
    M, N, k = geometry.M, geometry.N, geometry.k
    start_f = t + M + k
    if t < 0 or start_f + N > len(video.labels):
        raise IndexError(
            f"window t={t}, M={M}, k={k}, N={N} exceeds video of {len(video.labels)} frames"
        )
    return AnticipationExample(
        x_o=video.features[t : t + M],
        x_f=video.features[start_f : start_f + N],
        a_o=majority_label(video.labels[t : t + M]),
        a_f=int(video.labels[start_f]),
        future_frame_labels=video.labels[start_f : start_f + N].copy(),
        geometry=geometry,
    )


def _worker_count(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("AACT_THREADS", "0") or 0)
    return max(0, workers)


def _map(fn, items, workers: int | None):
    n = _worker_count(workers)
    if n <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def video_seed_base(seed: int) -> int:
    """Hash a dataset seed so that nearby seeds give disjoint per-video seeds."""
    return splitmix64(seed)[1]


def make_anticipation_set(
    grammar: ActivityGrammar,
    n: int,
    M: int,
    N: int,
    k: int,
    seed: int,
    k_max: int = 8,
    workers: int | None = None,
) -> AnticipationSet:
    """``n`` examples whose future window starts exactly at an action boundary.

    Video ``i`` is drawn from seed ``video_seed_base(seed) ^ i`` and has a fixed length, and the
    anticipated boundary is chosen independently of ``k`` (among boundaries at
    or after frame M + k_max), so datasets built with different k <= k_max
    share videos and targets and differ only in how early observation stops.
    """
    if not 0 <= k <= k_max:
        raise ValueError(f"horizon k={k} outside [0, {k_max}]")
    geometry = Geometry(grammar.d, grammar.num_actions, M, N, k)
    hi = grammar.segment_len_range[1]
    length = M + k_max + N + hi

    base = video_seed_base(seed)

    def one(i: int) -> AnticipationExample:
        vseed = base ^ i
        rng = Xoshiro256(vseed ^ 0x5DEECE66D)
        activity = rng.randint(0, grammar.num_activities - 1)
        video = sample_video(grammar, length, activity, vseed)
        cands = [b for b in video.boundaries() if M + k_max <= b <= length - N]
        b = cands[rng.randint(0, len(cands) - 1)]
        return make_example(video, b - M - k, geometry)

    ds = AnticipationSet.from_examples(_map(one, range(n), workers), geometry)
    ds.meta.update(seed=seed, k_max=k_max)
    return ds


def make_obs_pred_set(
    grammar: ActivityGrammar,
    n: int,
    video_len: int,
    obs_frac: float,
    pred_frac: float,
    seed: int,
    workers: int | None = None,
) -> AnticipationSet:
    """Observe the first obs_frac of each video, predict labels of the next pred_frac."""
    M = max(1, round(obs_frac * video_len))
    N = max(1, round(pred_frac * video_len))
    if M + N > video_len:
        raise ValueError(f"observation {M} + prediction {N} frames exceed video length {video_len}")
    geometry = Geometry(grammar.d, grammar.num_actions, M, N, 0)

    base = video_seed_base(seed)

    def one(i: int) -> AnticipationExample:
        vseed = base ^ i
        activity = Xoshiro256(vseed ^ 0x5DEECE66D).randint(0, grammar.num_activities - 1)
        return make_example(sample_video(grammar, video_len, activity, vseed), 0, geometry)

    return AnticipationSet.from_examples(_map(one, range(n), workers), geometry)


def stratified_fraction(ds: AnticipationSet, fraction: float, seed: int) -> AnticipationSet:
    """Per future-action class, keep round(fraction * class count) examples (at least one)."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = Xoshiro256(seed)
    keep = []
    for c in sorted(set(ds.a_f.tolist())):
        members = np.flatnonzero(ds.a_f == c)
        take = max(1, round(fraction * len(members)))
        perm = rng.permutation(len(members))
        keep.extend(members[perm[:take]].tolist())
    if len(set(ds.a_f[keep].tolist())) < 2 and ds.geometry.A > 1 and len(ds) > 1:
        raise DatasetError(f"fraction {fraction} leaves fewer than two classes")
    return ds.subset(sorted(keep))


# ---------------------------------------------------------------- file format


def _record_size(g: Geometry) -> int:
    return 8 * g.d * (g.M + g.N) + 4 * (2 + g.N)


def write_dataset(examples, path, geometry: Geometry | None = None) -> None:
    ds = examples if isinstance(examples, AnticipationSet) else AnticipationSet.from_examples(examples, geometry)
    g = ds.geometry
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, g.d, g.A, g.M, g.N, g.k, len(ds)))
        for i in range(len(ds)):
            fh.write(ds.x_o[i].astype("<f8").tobytes())
            fh.write(ds.x_f[i].astype("<f8").tobytes())
            labels = np.concatenate([[ds.a_o[i], ds.a_f[i]], ds.future[i]])
            fh.write(labels.astype("<u4").tobytes())


def read_dataset(path, expect: Geometry | None = None) -> AnticipationSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, d, A, M, N, k, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {version}")
    g = Geometry(d, A, M, N, k)
    if expect is not None and expect != g:
        raise DatasetError(f"{path}: geometry {g} does not match expected {expect}")
    rec = _record_size(g)
    body = len(raw) - _HEADER.size
    if body < rec * count:
        raise DatasetError(f"{path}: truncated file, record {body // rec} of {count} is incomplete")
    if body > rec * count:
        raise DatasetError(f"{path}: {body - rec * count} trailing bytes after {count} records")
    dt = np.dtype([("x_o", "<f8", (M, d)), ("x_f", "<f8", (N, d)), ("labels", "<u4", (2 + N,))])
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=_HEADER.size)
    labels = arr["labels"].astype(np.int64)
    if count and labels.max() >= A:
        bad = int(np.flatnonzero((labels >= A).any(axis=1))[0])
        raise DatasetError(f"{path}: record {bad} has a label >= A={A}")
    return AnticipationSet(
        g,
        arr["x_o"].astype(np.float64),
        arr["x_f"].astype(np.float64),
        labels[:, 0].copy(),
        labels[:, 1].copy(),
        labels[:, 2:].copy(),
    )
