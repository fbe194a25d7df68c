"""Training, inference and the experiment protocols built on top of them."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .align import AlignmentParams
from .clustering import ClusterConfig
from .datagen import SyntheticDataset, generate_dataset, make_domain_family
from .desknet import DeskNet, OptimState, forward_style, loss_and_grad, predict_logits, sgd_step
from .errors import ConfigError, ShapeError
from .style_stats import (GaussianStyle, batch_styles, domain_gap_terms, estimate_domain_style,
                          frechet_distance)
from .unified import METHODS, StyleSampler, UnifiedDomain, determine_unified_domain

log = logging.getLogger(__name__)

CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    initial_epochs: int = 5
    update_interval: int = 5
    learning_rate: float = 0.05
    momentum: float = 0.0
    n_clusters: int = 4
    alpha: float = 0.6
    batch_size: int = 32
    seed: int = 0
    unified_method: str = "average"
    mode: str = "conststyle"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 1 <= self.initial_epochs <= self.epochs:
            raise ConfigError("need 1 <= initial_epochs <= epochs")
        if self.update_interval < 1:
            raise ConfigError("update_interval must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.unified_method not in METHODS:
            raise ConfigError(f"unified_method must be one of {METHODS}")
        if self.mode not in ("erm", "conststyle"):
            raise ConfigError("mode must be 'erm' or 'conststyle'")
        if self.mode == "conststyle" and self.update_interval > self.initial_epochs:
            # otherwise the aligned phase would start before any unified domain exists
            raise ConfigError("conststyle mode needs update_interval <= initial_epochs")

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig(n_clusters=self.n_clusters, seed=self.seed)


@dataclass
class EpochLog:
    epoch: int
    mode: str
    loss: float
    train_acc: float
    refresh: bool
    barycenter_residual: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochLog] = field(default_factory=list)
    refreshes: list[tuple[int, str, float]] = field(default_factory=list)
    net: Optional[DeskNet] = None
    unified: Optional[UnifiedDomain] = None
    # theta_s weights at the end of the initial (unaligned) phase
    initial_style_params: Optional[np.ndarray] = None


@dataclass
class DomainEval:
    domain_id: int
    alpha: float
    n: int
    correct: int
    frechet_to_unified: float

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else float("nan")


@dataclass
class EvalReport:
    rows: list[DomainEval]
    confusion: np.ndarray
    alpha: float
    mode: str = "conststyle"
    holdout: Optional[int] = None

    @property
    def n(self) -> int:
        return sum(r.n for r in self.rows)

    @property
    def accuracy(self) -> float:
        return sum(r.correct for r in self.rows) / self.n

    def domain_accuracy(self, domain_id: int) -> float:
        for r in self.rows:
            if r.domain_id == domain_id:
                return r.accuracy
        raise KeyError(domain_id)


def _unified_from_net(net: DeskNet, inputs: np.ndarray, config: TrainConfig) -> UnifiedDomain:
    return determine_unified_domain(harvest_styles(net, inputs), config.cluster_config(), config.unified_method)


def harvest_styles(net: DeskNet, inputs: np.ndarray) -> np.ndarray:
    """Instance-style vectors of ``theta_s`` features for every input, no alignment."""
    out = []
    for lo in range(0, inputs.shape[0], CHUNK):
        z, _ = forward_style(net, np.asarray(inputs[lo:lo + CHUNK], dtype=np.float64))
        out.append(batch_styles(z))
    return np.concatenate(out)


def train(dataset: SyntheticDataset, config: TrainConfig,
          callback=None) -> tuple[DeskNet, Optional[UnifiedDomain], TrainReport]:
    """Two-phase training loop.

    Epochs ``1..initial_epochs`` are plain ERM. Afterwards (conststyle mode)
    every sample's style features are aligned to a style drawn from the
    current unified domain before the trunk. In conststyle mode the unified
    domain is recomputed after every epoch that is a multiple of
    ``update_interval``, from styles harvested by the current ``theta_s`` over
    the whole training set.

    Shuffling, style sampling and clustering use separate generators derived
    from ``config.seed``, so an ERM run and a conststyle run with the same seed
    see identical batches and start from identical weights.
    """
    if len(dataset) == 0:
        raise ConfigError("empty training set")
    x_all = dataset.inputs
    y_all = dataset.labels
    n = len(dataset)
    net = DeskNet(dataset.n_classes, seed=config.seed)
    optim = OptimState(config.learning_rate, config.momentum)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    style_rng = np.random.default_rng([config.seed, 2])
    report = TrainReport()
    unified: Optional[UnifiedDomain] = None
    sampler: Optional[StyleSampler] = None
    conststyle = config.mode == "conststyle"

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        aligned = conststyle and epoch > config.initial_epochs
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb = np.asarray(x_all[idx], dtype=np.float64)
            yb = y_all[idx]
            loss, grad, logits = loss_and_grad(net, (xb, yb), rng=style_rng,
                                               mode="conststyle" if aligned else "erm",
                                               sampler=sampler, return_logits=True)
            sgd_step(net, grad, optim)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))

        refresh = conststyle and epoch % config.update_interval == 0
        residual = float("nan")
        if refresh:
            unified = _unified_from_net(net, x_all, config)
            sampler = StyleSampler(unified)
            residual = unified.residual if unified.method == "barycenter" else 0.0
            report.refreshes.append((epoch, unified.method, residual))
        if epoch == config.initial_epochs:
            lo, hi = net.offsets["bs"]
            report.initial_style_params = net.params[:hi].copy()
        entry = EpochLog(epoch, config.mode, total_loss / n, correct / n, refresh, residual,
                         time.perf_counter() - t0)
        report.epochs.append(entry)
        log.debug("epoch %d loss %.4f acc %.3f", epoch, entry.loss, entry.train_acc)
        if callback is not None:
            callback(entry)

    report.net = net
    report.unified = unified
    return net, unified, report


def style_net_from(net: DeskNet, style_params: Optional[np.ndarray]) -> Optional[DeskNet]:
    """A copy of ``net`` with ``theta_s`` replaced by ``style_params`` (None passes through)."""
    if style_params is None:
        return None
    other = net.copy()
    other.params[:style_params.shape[0]] = style_params
    return other


def infer(net: DeskNet, unified: Optional[UnifiedDomain], samples, alpha: float = 0.6,
          style_params: Optional[np.ndarray] = None) -> np.ndarray:
    """Predicted labels; style features are partially aligned when a unified domain is given.

    ``style_params`` swaps in a different ``theta_s`` (e.g. the one saved at the
    end of the initial phase). No randomness is involved.
    """
    inputs = samples.inputs if isinstance(samples, SyntheticDataset) else np.asarray(samples)
    if inputs.ndim == 3:
        inputs = inputs[None]
    AlignmentParams(alpha)
    if unified is not None and unified.channels != net.style_channels:
        raise ShapeError("unified domain does not match the network's style channels")
    style_net = style_net_from(net, style_params)
    preds = []
    for lo in range(0, inputs.shape[0], CHUNK):
        xb = np.asarray(inputs[lo:lo + CHUNK], dtype=np.float64)
        logits = predict_logits(net, xb, None if unified is None else unified.mean, alpha,
                                style_net=style_net)
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(net: DeskNet, unified: Optional[UnifiedDomain], dataset: SyntheticDataset,
             alpha: float = 0.6, domain_ids: Optional[Sequence[int]] = None, mode: str = "conststyle",
             holdout: Optional[int] = None, reference: Optional[UnifiedDomain] = None,
             style_params: Optional[np.ndarray] = None) -> EvalReport:
    """Per-domain accuracy, confusion counts and style distance to the unified domain.

    ``reference`` is the Gaussian distances are measured against; it defaults
    to ``unified`` (and distances are NaN when both are None).
    """
    ref = reference if reference is not None else unified
    if domain_ids is None:
        domain_ids = dataset.domain_ids
    k = dataset.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    rows = []
    for d in domain_ids:
        mask = dataset.domains == d
        if not np.any(mask):
            raise ConfigError(f"domain {d} not present in dataset")
        inputs = dataset.inputs[mask]
        labels = dataset.labels[mask]
        pred = infer(net, unified, inputs, alpha, style_params)
        np.add.at(confusion, (labels, pred), 1)
        dist = float("nan")
        if ref is not None:
            dist = frechet_distance(estimate_domain_style(harvest_styles(net, inputs)), ref.style)
        rows.append(DomainEval(int(d), alpha, int(mask.sum()), int(np.sum(pred == labels)), dist))
    return EvalReport(rows, confusion, alpha, mode, holdout)


def run_leave_one_out(dataset: SyntheticDataset, config: TrainConfig,
                      holdouts: Optional[Sequence[int]] = None) -> list[EvalReport]:
    """Train on all domains but one and evaluate on the held-out one, for every domain.

    ERM folds are evaluated without alignment; conststyle folds use partial
    alignment with ``config.alpha``.
    """
    ids = dataset.domain_ids
    if len(ids) < 2:
        raise ConfigError("leave-one-out needs at least two domains")
    reports = []
    for d in (ids if holdouts is None else holdouts):
        train_set = dataset.select_domains([i for i in ids if i != d])
        net, unified, _ = train(train_set, config)
        reports.append(evaluate(net, unified, dataset, config.alpha, [d], config.mode, holdout=d))
    return reports


def loo_average(reports: Sequence[EvalReport]) -> float:
    """Mean of the per-fold held-out accuracies."""
    return float(np.mean([r.accuracy for r in reports]))


def paired_leave_one_out(dataset: SyntheticDataset, config: TrainConfig,
                         holdouts: Optional[Sequence[int]] = None) -> dict[str, list[EvalReport]]:
    """ERM and conststyle leave-one-out with identical data, seeds and initial weights."""
    return {mode: run_leave_one_out(dataset, replace(config, mode=mode), holdouts)
            for mode in ("erm", "conststyle")}


@dataclass
class SweepRow:
    shift_level: float
    frechet_to_unified: float
    erm_accuracy: float
    conststyle_accuracy: float


def distance_sweep(shift_levels: Sequence[float], config: TrainConfig, n_classes: int = 4,
                   per_class: int = 50, data_seed: int = 0,
                   family_seed: Optional[int] = None) -> list[SweepRow]:
    """Train ERM and conststyle on the level-0 domain; test on domains of growing shift.

    The first level is the training (base) domain. Distances are Frechet
    distances between each domain's ``theta_s`` style Gaussian (conststyle
    model) and its unified domain.
    """
    levels = [float(v) for v in shift_levels]
    if len(levels) < 3:
        raise ConfigError("distance sweep needs at least three shift levels")
    specs = make_domain_family(len(levels), levels, data_seed if family_seed is None else family_seed,
                               shared_direction=True)
    data = generate_dataset(specs, n_classes, per_class, data_seed)
    base = data.select_domains([specs[0].domain_id])
    test = generate_dataset(specs, n_classes, per_class, data_seed + 10_000)
    erm_net, _, _ = train(base, replace(config, mode="erm"))
    cs_net, unified, _ = train(base, replace(config, mode="conststyle"))
    erm_eval = evaluate(erm_net, None, test, config.alpha, mode="erm")
    cs_eval = evaluate(cs_net, unified, test, config.alpha)
    rows = []
    for spec, er, cr in zip(specs, erm_eval.rows, cs_eval.rows):
        rows.append(SweepRow(spec.shift_level, cr.frechet_to_unified, er.accuracy, cr.accuracy))
    return rows


def sweep_trend(rows: Sequence[SweepRow]) -> dict:
    """Spearman correlations of accuracy against distance and level-0 to max-level drops."""
    dist = [r.frechet_to_unified for r in rows]
    out = {}
    for key in ("erm", "conststyle"):
        acc = [getattr(r, f"{key}_accuracy") for r in rows]
        rho = spearmanr(dist, acc).statistic if len(set(acc)) > 1 else 0.0
        out[f"{key}_spearman"] = float(rho)
        out[f"{key}_drop"] = acc[0] - acc[-1]
    out["distances_increasing"] = all(b > a for a, b in zip(dist, dist[1:]))
    return out


def alpha_sweep(net: DeskNet, unified: UnifiedDomain, dataset: SyntheticDataset,
                alphas: Sequence[float], domain_ids: Optional[Sequence[int]] = None) -> list[EvalReport]:
    """Re-run inference for each alpha; the trained model is untouched."""
    return [evaluate(net, unified, dataset, float(a), domain_ids) for a in alphas]


def cluster_sweep(dataset: SyntheticDataset, config: TrainConfig, cluster_counts: Sequence[int],
                  holdout: int) -> list[tuple[int, EvalReport]]:
    """Retrain with each number of clusters and evaluate on the held-out domain."""
    ids = dataset.domain_ids
    train_set = dataset.select_domains([i for i in ids if i != holdout])
    out = []
    for k in cluster_counts:
        cfg = replace(config, n_clusters=int(k), mode="conststyle")
        net, unified, _ = train(train_set, cfg)
        out.append((int(k), evaluate(net, unified, dataset, cfg.alpha, [holdout], holdout=holdout)))
    return out


def scalability_sweep(sizes: Sequence[int], config: TrainConfig, epochs: int = 3,
                      n_classes: int = 4, data_seed: int = 0) -> list[tuple[int, float]]:
    """Median wall-clock seconds per conststyle epoch for each training-set size.

    Each size is a multiple of ``n_classes * 4`` images spread evenly over the
    default four-domain family. The schedule aligns and refreshes the unified
    domain every epoch after the first, so the timed epochs include style
    harvesting, clustering and alignment.
    """
    if epochs < 3:
        raise ConfigError("need at least three timed epochs per size")
    specs = make_domain_family(4, (0.0, 1.0, 2.0, 3.0), data_seed)
    cells = n_classes * len(specs)
    cfg = replace(config, mode="conststyle", epochs=epochs + 1, initial_epochs=1, update_interval=1)
    rows = []
    for size in sorted(int(s) for s in sizes):
        per = max(1, size // cells)
        data = generate_dataset(specs, n_classes, per, data_seed)
        _, _, report = train(data, cfg)
        secs = [e.seconds for e in report.epochs[1:]]
        rows.append((len(data), float(np.median(secs))))
    return rows


def linear_fit_deviation(rows: Sequence[tuple[int, float]]) -> float:
    """Largest relative deviation of any point from the least-squares line through ``rows``."""
    x = np.array([r[0] for r in rows], dtype=np.float64)
    y = np.array([r[1] for r in rows], dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    return float(np.max(np.abs(y - fit) / fit))


@dataclass
class BoundRow:
    domain_id: int
    d_mu: float
    d_sigma: float
    frechet_to_unified: float


def bound_diagnostics(unified, domain_styles: dict) -> list[BoundRow]:
    """Mean/std distance terms and Frechet distance from each domain to the unified style."""
    style = unified.style if isinstance(unified, UnifiedDomain) else unified
    if not isinstance(style, GaussianStyle):
        raise TypeError("unified must be a UnifiedDomain or GaussianStyle")
    rows = []
    for d, eps in domain_styles.items():
        d_mu, d_sigma = domain_gap_terms(style, eps)
        fd = frechet_distance(estimate_domain_style(eps), style)
        rows.append(BoundRow(int(d), d_mu, d_sigma, fd))
    return rows


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
