"""Metrics, evaluation protocols and the experiment suites.

Report CSV header: ``protocol,model,param,metric,value,seed,n``. Plot-data
files hold seed-mean curves as ``series,x,y`` rows.
"""
from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import (
    AnticipationSet,
    _map,
    build_grammar,
    make_anticipation_set,
    make_obs_pred_set,
    stratified_fraction,
)
from .losses import TERMS
from .models import KINDS, ModelParams, anticipation, dense_future, forward
from .training import TrainConfig, train

log = logging.getLogger(__name__)

REPORT_HEADER = ("protocol", "model", "param", "metric", "value", "seed", "n")
SUITES = ("model_comparison", "cycle_ablation", "loss_ablation", "horizon_sweep", "data_fraction", "obs_pred")

CYCLE_VARIANTS = {
    "semantic": tuple(t for t in TERMS if t != "cyc_p"),
    "feature": tuple(t for t in TERMS if t != "cyc_s"),
    "both": TERMS,
}
LOSS_VARIANTS = {
    "cyc_p+antic_f": ("cyc_p", "antic_f"),
    "cyc_p+antic_f+recog_o": ("cyc_p", "antic_f", "recog_o"),
    "full": TERMS,
}


# ---------------------------------------------------------------- metrics


def top_k_accuracy(predictions, targets, k: int) -> float:
    """Fraction of rows whose target is among the k most probable classes.

    Equal probabilities rank by ascending class index.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if p.ndim != 2:
        raise ValueError(f"predictions must be (n, A), got shape {p.shape}")
    A = p.shape[1]
    if not 1 <= k <= A:
        raise ValueError(f"k={k} outside [1, {A}]")
    if len(t) != len(p):
        raise ValueError(f"{len(p)} predictions but {len(t)} targets")
    if len(t) == 0:
        raise ValueError("no predictions to score")
    ranked = np.argsort(-p, axis=1, kind="stable")[:, :k]
    return float((ranked == t[:, None]).any(axis=1).mean())


def moc_accuracy(per_frame_predictions, per_frame_targets, num_classes: int | None = None) -> float:
    """Mean over classes of per-class frame accuracy.

    Predictions may be labels or per-frame distributions (argmax is taken).
    Classes that never occur in the targets are left out of the mean.
    """
    pred = np.asarray(per_frame_predictions)
    tgt = np.asarray(per_frame_targets, dtype=np.int64).reshape(-1)
    if pred.ndim == tgt.ndim + 1 or (pred.ndim >= 2 and pred.shape[-1] == num_classes and pred.size != tgt.size):
        pred = pred.argmax(axis=-1)
    pred = pred.reshape(-1).astype(np.int64)
    if tgt.size == 0:
        raise ValueError("moc_accuracy needs at least one frame")
    if pred.size != tgt.size:
        raise ValueError(f"{pred.size} predicted frames but {tgt.size} target frames")
    accs = [float((pred[tgt == c] == c).mean()) for c in np.unique(tgt)]
    return float(np.mean(accs))


# ---------------------------------------------------------------- reports


@dataclass(frozen=True, order=True)
class ReportRow:
    protocol: str
    model: str
    param: str
    metric: str
    value: float
    seed: int
    n: int


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)

    def extend(self, other: EvalReport) -> EvalReport:
        self.rows.extend(other.rows)
        return self

    def sorted_rows(self) -> list[ReportRow]:
        return sorted(self.rows, key=lambda r: (r.protocol, r.model, r.param, r.metric, r.seed))

    def to_csv(self) -> str:
        lines = [",".join(REPORT_HEADER)]
        for r in self.sorted_rows():
            lines.append(f"{r.protocol},{r.model},{r.param},{r.metric},{r.value!r},{r.seed},{r.n}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> EvalReport:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != REPORT_HEADER:
                raise ValueError(f"{path}: unexpected report header {header}")
            rows = []
            for line in fh:
                p, m, par, met, v, s, n = line.rstrip("\n").split(",")
                rows.append(ReportRow(p, m, par, met, float(v), int(s), int(n)))
        return cls(rows)

    def select(self, **match) -> list[ReportRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def seed_mean(self, **match) -> float:
        vals = [r.value for r in self.select(**match)]
        if not vals:
            raise KeyError(f"no report rows match {match}")
        return float(np.mean(vals))

    def series(self, metric: str, protocol: str | None = None) -> dict[str, list[tuple[float, float]]]:
        """Seed-mean (x, y) points per model/variant for one metric."""
        acc: dict[tuple[str, str], list[float]] = {}
        for r in self.rows:
            if r.metric != metric or (protocol is not None and r.protocol != protocol):
                continue
            acc.setdefault((r.model, r.param), []).append(r.value)
        out: dict[str, list[tuple[float, float]]] = {}
        for (model, param), vals in acc.items():
            name, x = _split_param(model, param)
            out.setdefault(name, []).append((x, float(np.mean(vals))))
        return {k: sorted(v) for k, v in sorted(out.items())}

    def write_plot_data(self, path, metric: str, protocol: str | None = None) -> None:
        with open(path, "w") as fh:
            fh.write("series,x,y\n")
            for name, pts in self.series(metric, protocol).items():
                for x, y in pts:
                    fh.write(f"{name},{x!r},{y!r}\n")


def _split_param(model: str, param: str) -> tuple[str, float]:
    """'k=4' -> (model, 4.0); 'obs=0.2;pred=0.5' -> (model@obs=0.2, 0.5); non-numeric -> series per value."""
    parts = dict(p.split("=", 1) for p in param.split(";") if "=" in p)
    if "pred" in parts:
        return f"{model}@obs={parts['obs']}", float(parts["pred"])
    for key in ("k", "fraction"):
        if key in parts:
            return model, float(parts[key])
    return f"{model}:{param}", 0.0


# ---------------------------------------------------------------- evaluate


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    for name, t in sorted(params.named_tensors().items()):
        h.update(name.encode())
        h.update(t.data.tobytes())
    return h.hexdigest()


def _chunks(n: int, size: int) -> list[slice]:
    return [slice(s, min(s + size, n)) for s in range(0, n, size)]


def predict_future(params: ModelParams, x_o: np.ndarray, workers: int | None = None) -> np.ndarray:
    def run(sl):
        with T.no_grad():
            return anticipation(forward(x_o[sl], params), params.kind).data

    parts = _map(run, _chunks(len(x_o), 256), workers)
    return np.concatenate(parts)


def predict_dense(params: ModelParams, x_o: np.ndarray, workers: int | None = None) -> np.ndarray:
    def run(sl):
        with T.no_grad():
            return dense_future(x_o[sl], params).data

    parts = _map(run, _chunks(len(x_o), 256), workers)
    return np.concatenate(parts)


def evaluate(
    params: ModelParams,
    dataset: AnticipationSet,
    protocol: str = "at_horizon",
    seed: int = 0,
    model: str | None = None,
    param: str | None = None,
    return_predictions: bool = False,
    workers: int | None = None,
):
    """Score ``params`` on ``dataset``.

    at_horizon:   Top-1 / Top-5 of the anticipated distribution against a_f.
    dense_future: Mean-over-Classes of per-frame predictions over the N future frames.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    g = dataset.geometry
    if (g.d, g.A, g.M, g.N) != (params.d, params.num_classes, params.obs_len, params.fut_len):
        raise ValueError(
            f"model geometry (d={params.d}, A={params.num_classes}, M={params.obs_len}, N={params.fut_len}) "
            f"does not match dataset {g}"
        )
    model = model or params.kind
    param = param if param is not None else f"k={g.k}"
    report = EvalReport()
    if protocol == "at_horizon":
        probs = predict_future(params, dataset.x_o, workers)
        for k in (1, 5):
            if k <= g.A:
                report.rows.append(
                    ReportRow(protocol, model, param, f"top{k}", top_k_accuracy(probs, dataset.a_f, k), seed, n)
                )
    elif protocol == "dense_future":
        probs = predict_dense(params, dataset.x_o, workers)
        report.rows.append(ReportRow(protocol, model, param, "moc", moc_accuracy(probs, dataset.future, g.A), seed, n))
    else:
        raise ValueError(f"unknown protocol {protocol!r}; expected at_horizon or dense_future")
    return (report, probs) if return_predictions else report


# ---------------------------------------------------------------- suites


@dataclass
class SuiteConfig:
    suite: str = "model_comparison"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(gradcheck=False))
    models: tuple[str, ...] = KINDS
    num_activities: int = 3
    noise_sigma: float = 0.3
    segment_min: int = 4
    segment_max: int = 10
    n_train: int = 2000
    n_test: int = 500
    k_max: int = 8
    horizons: tuple[int, ...] = (0, 2, 4, 6, 8)
    fractions: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    fraction_model: str = "act"
    obs_fracs: tuple[float, ...] = (0.2, 0.3)
    pred_fracs: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    video_len: int = 40

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}; expected one of {SUITES}")
        bad = set(self.models) - set(KINDS)
        if bad:
            raise ValueError(f"unknown model kinds {sorted(bad)}")


def _grammar(cfg: SuiteConfig, seed: int):
    t = cfg.train
    return build_grammar(
        cfg.num_activities, t.A, t.d, seed, cfg.noise_sigma, (cfg.segment_min, cfg.segment_max)
    )


_SPLIT_OFFSET = {"train": 1, "test": 2 + (1 << 40)}


def dataset_for(cfg: SuiteConfig, seed: int, split: str, k: int | None = None) -> AnticipationSet:
    """The train or test split of run ``seed``; the two never share videos."""
    if split not in _SPLIT_OFFSET:
        raise ValueError(f"split must be train or test, got {split!r}")
    t = cfg.train
    g = _grammar(cfg, seed)
    n = cfg.n_train if split == "train" else cfg.n_test
    k = t.k if k is None else k
    return make_anticipation_set(g, n, t.M, t.N, k, seed=2 * seed + _SPLIT_OFFSET[split], k_max=cfg.k_max)


def train_test_sets(cfg: SuiteConfig, seed: int, k: int | None = None):
    return dataset_for(cfg, seed, "train", k), dataset_for(cfg, seed, "test", k)


def _fit(cfg: SuiteConfig, seed: int, train_set, **overrides) -> ModelParams:
    tc = dataclasses.replace(cfg.train, seed=seed, **overrides)
    params, _ = train(tc, train_set)
    return params


def run_suite(cfg: SuiteConfig, progress=None) -> EvalReport:
    """Train one model per (cell, seed) and evaluate it on that seed's test set."""
    report = EvalReport()
    say = progress or (lambda msg: log.info(msg))
    for seed in cfg.seeds:
        if cfg.suite == "model_comparison":
            tr, te = train_test_sets(cfg, seed)
            for kind in cfg.models:
                p = _fit(cfg, seed, tr, model_kind=kind)
                report.extend(evaluate(p, te, seed=seed))
                say(f"seed {seed} {kind} done")
        elif cfg.suite in ("cycle_ablation", "loss_ablation"):
            tr, te = train_test_sets(cfg, seed)
            variants = CYCLE_VARIANTS if cfg.suite == "cycle_ablation" else LOSS_VARIANTS
            for name, terms in variants.items():
                p = _fit(cfg, seed, tr, model_kind="act", terms=terms)
                report.extend(evaluate(p, te, protocol="at_horizon", seed=seed, model="act", param=name))
                say(f"seed {seed} {name} done")
        elif cfg.suite == "horizon_sweep":
            for k in cfg.horizons:
                tr, te = train_test_sets(cfg, seed, k)
                for kind in cfg.models:
                    p = _fit(cfg, seed, tr, model_kind=kind, k=k)
                    report.extend(evaluate(p, te, seed=seed))
                    say(f"seed {seed} k={k} {kind} done")
        elif cfg.suite == "data_fraction":
            tr, te = train_test_sets(cfg, seed)
            for frac in cfg.fractions:
                sub = stratified_fraction(tr, frac, seed)
                p = _fit(cfg, seed, sub, model_kind=cfg.fraction_model)
                report.extend(evaluate(p, te, seed=seed, model=cfg.fraction_model, param=f"fraction={frac}"))
                say(f"seed {seed} fraction {frac} done")
        elif cfg.suite == "obs_pred":
            g = _grammar(cfg, seed)
            for obs in cfg.obs_fracs:
                for pred in cfg.pred_fracs:
                    tr = make_obs_pred_set(g, cfg.n_train, cfg.video_len, obs, pred, 2 * seed + _SPLIT_OFFSET["train"])
                    te = make_obs_pred_set(g, cfg.n_test, cfg.video_len, obs, pred, 2 * seed + _SPLIT_OFFSET["test"])
                    geo = tr.geometry
                    for kind in cfg.models:
                        p = _fit(cfg, seed, tr, model_kind=kind, M=geo.M, N=geo.N, k=0)
                        report.extend(
                            evaluate(p, te, protocol="dense_future", seed=seed, param=f"obs={obs};pred={pred}")
                        )
                    say(f"seed {seed} obs {obs} pred {pred} done")
    return report
