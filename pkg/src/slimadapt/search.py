"""Architecture selection on unlabelled target data.

The selection signal is the anchor discrepancy: the mean squared
difference between a candidate sub-model's deployment-head predictions
and the full-width model's, both AdaBN-recalibrated on the target set.
Since the largest model is statistically the most accurate one in a
trained bank, a smaller discrepancy predicts higher accuracy, which
makes the score usable without labels.

Search strategies: random sampling inside a FLOPs band, and an inherited
greedy ladder that walks from the slimmest configuration to the full one,
at each budget widening the previous winner by randomly distributed
channel increments and keeping the lowest-discrepancy candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from .errors import SearchError, UsageError
from .slimnet import Architecture, ParamStore, SlimModel, WidthConfig, adabn_recalibrate

__all__ = [
    "DiscrepancyScore",
    "SearchPlan",
    "SearchStep",
    "CorrelationReport",
    "recalibrated",
    "anchor_discrepancy",
    "discrepancy_between",
    "config_accuracy",
    "sample_configs_spanning",
    "sample_config_at_budget",
    "random_search",
    "inherited_greedy_search",
    "correlate",
    "monotonicity_probe",
    "triangle_bound_terms",
    "linear_budget_ladder",
]


@dataclass(frozen=True)
class DiscrepancyScore:
    config: WidthConfig
    delta: float
    flops_ratio: float


@dataclass(frozen=True)
class SearchStep:
    budget_ratio: float
    config: WidthConfig
    delta: float
    saturated: bool = False


@dataclass(frozen=True)
class CorrelationReport:
    pearson: float
    spearman: float
    count: int


@dataclass(frozen=True)
class SearchPlan:
    """Budget ladder for the inherited greedy search.

    The default ladder is geometric, halving from full FLOPs k times
    (k = 6 gives 1/32, 1/16, ..., 1/2, 1), which concentrates budgets in
    the capacity region where accuracy actually varies.  When the
    slimmest model is too large for the lowest geometric rung, the FLOPs
    gap between the slimmest and the full model is divided into k equal
    increments instead.  An explicit `budget_ratios` list (fractions of
    full FLOPs, strictly increasing) overrides both.
    """

    k: int = 6
    q: int = 20
    seed: int = 0
    tolerance: float = 0.02
    budget_ratios: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.k < 1 or self.q < 1:
            raise UsageError(f"need k >= 1 and q >= 1, got k={self.k}, q={self.q}")

    def budgets(self, arch: Architecture) -> list[float]:
        full = arch.full_config().flops
        lo = arch.smallest_config().flops / full
        if self.budget_ratios is not None:
            ratios = [float(r) for r in self.budget_ratios]
            if any(b <= a for a, b in zip(ratios, ratios[1:])):
                raise UsageError("budget ratios must be strictly increasing")
            if ratios[0] <= lo or ratios[-1] > 1.0 + 1e-12:
                raise UsageError(f"budget ratios must lie in ({lo:.4f}, 1]")
            return ratios
        geometric = [2.0 ** -(self.k - 1 - i) for i in range(self.k)]
        if geometric[0] * (1 + self.tolerance) > lo:
            return geometric
        return [r / full for r in linear_budget_ladder(arch, self.k)]


def linear_budget_ladder(arch: Architecture, k: int) -> list[float]:
    """k absolute FLOPs budgets splitting [smallest, full] into equal parts."""
    lo = arch.smallest_config().flops
    hi = arch.full_config().flops
    return [lo + (i + 1) * (hi - lo) / k for i in range(k)]


def recalibrated(bank: ParamStore, config: WidthConfig, target_x: np.ndarray,
                 batch_size: int = 256) -> SlimModel:
    model = bank.slice(config)
    adabn_recalibrate(model, target_x, batch_size=batch_size)
    return model


def discrepancy_between(candidate: SlimModel, anchor_probs: np.ndarray,
                        target_x: np.ndarray, raw: bool = False) -> float:
    """Squared output distance to the anchor's predictions; `raw` skips the
    per-sample normalization (rankings are identical either way)."""
    if candidate.bn is None:
        raise UsageError("candidate must be AdaBN-recalibrated before scoring")
    delta = float(((candidate.predict(target_x, head="a") - anchor_probs) ** 2).sum())
    return delta if raw else delta / len(target_x)


def anchor_discrepancy(bank: ParamStore, config: WidthConfig, target_x: np.ndarray,
                       anchor_probs: np.ndarray | None = None) -> DiscrepancyScore:
    """Score one configuration against the full-width anchor.

    Both the candidate and the anchor are recalibrated on `target_x`; pass
    `anchor_probs` to reuse the anchor's predictions across many calls.
    """
    if anchor_probs is None:
        anchor_probs = _anchor_probs(bank, target_x)
    candidate = recalibrated(bank, config, target_x)
    delta = discrepancy_between(candidate, anchor_probs, target_x)
    return DiscrepancyScore(config=config, delta=delta,
                            flops_ratio=config.flops / bank.arch.full_config().flops)


def _anchor_probs(bank: ParamStore, target_x: np.ndarray) -> np.ndarray:
    return recalibrated(bank, bank.arch.full_config(), target_x).predict(target_x, head="a")


def config_accuracy(bank: ParamStore, config: WidthConfig, target_x: np.ndarray,
                    target_y: np.ndarray, head: str = "a", batch_size: int = 256) -> float:
    """Target accuracy of one width after AdaBN (evaluation paths only)."""
    model = recalibrated(bank, config, target_x, batch_size=batch_size)
    pred = model.predict(target_x, head=head).argmax(axis=1)
    return float((pred == np.asarray(target_y)).mean())


def sample_configs_spanning(rng: np.random.Generator, arch: Architecture, n: int) -> list[WidthConfig]:
    """n configurations spanning the FLOPs range.

    Widths are drawn log-uniformly per block: FLOPs are quadratic in the
    widths, so uniform widths would pile most samples into the mid-range
    and leave the small-capacity tail nearly unsampled.
    """
    lows, highs = arch.min_widths(), arch.block_max_widths
    out = []
    for _ in range(n):
        widths = []
        for lo, hi in zip(lows, highs):
            w = int(round(np.exp(rng.uniform(np.log(lo), np.log(hi)))))
            widths.append(min(max(w, lo), hi))
        out.append(arch.make_config(tuple(widths)))
    return out


def sample_config_at_budget(rng: np.random.Generator, arch: Architecture, budget: float,
                            tolerance: float = 0.02, max_tries: int = 200) -> WidthConfig:
    """A random legal config whose FLOPs land within ±tolerance of budget.

    Starts from a uniform random config and walks single-channel steps on
    random blocks toward the budget; channel granularity is 1, so any
    reachable band of this relative width is hit quickly.
    """
    lo_f, hi_f = budget * (1 - tolerance), budget * (1 + tolerance)
    lows, highs = arch.min_widths(), arch.block_max_widths
    if hi_f < arch.smallest_config().flops or lo_f > arch.full_config().flops:
        raise SearchError(f"budget {budget:.1f} outside the reachable FLOPs range")
    for _ in range(max_tries):
        widths = [int(rng.integers(lo, hi + 1)) for lo, hi in zip(lows, highs)]
        for _ in range(4 * sum(highs)):
            flops = arch.make_config(widths).flops
            if lo_f <= flops <= hi_f:
                return arch.make_config(widths)
            if flops < lo_f:
                grow = [b for b in range(len(widths)) if widths[b] < highs[b]]
                if not grow:
                    break
                widths[int(rng.choice(grow))] += 1
            else:
                shrink = [b for b in range(len(widths)) if widths[b] > lows[b]]
                if not shrink:
                    break
                widths[int(rng.choice(shrink))] -= 1
    raise SearchError(f"no legal config found within ±{tolerance:.0%} of budget {budget:.1f}")


def random_search(bank: ParamStore, budget: float, n: int, target_x: np.ndarray,
                  rng: np.random.Generator, tolerance: float = 0.02,
                  anchor_probs: np.ndarray | None = None
                  ) -> tuple[WidthConfig, list[DiscrepancyScore]]:
    """Sample n configs inside the budget band, return the lowest-score one
    together with the whole score list."""
    if anchor_probs is None:
        anchor_probs = _anchor_probs(bank, target_x)
    scores = []
    for _ in range(n):
        cfg = sample_config_at_budget(rng, bank.arch, budget, tolerance)
        scores.append(anchor_discrepancy(bank, cfg, target_x, anchor_probs=anchor_probs))
    best = min(scores, key=lambda s: s.delta)
    return best.config, scores


def _grow_candidate(rng: np.random.Generator, arch: Architecture, base: WidthConfig,
                    lo_f: float, hi_f: float) -> tuple[WidthConfig, bool]:
    """Widen `base` by single channels on random blocks until its FLOPs
    reach [lo_f, hi_f]; returns (config, saturated).  Overshoot is a
    failure signalled as None config via ValueError to let callers retry."""
    widths = list(base.widths)
    highs = arch.block_max_widths
    while True:
        flops = arch.make_config(widths).flops
        if flops > hi_f:
            raise ValueError("overshoot")
        if flops >= lo_f:
            return arch.make_config(widths), False
        grow = [b for b in range(len(widths)) if widths[b] < highs[b]]
        if not grow:
            return arch.make_config(widths), True  # every block at its max
        widths[int(rng.choice(grow))] += 1


def inherited_greedy_search(bank: ParamStore, plan: SearchPlan, target_x: np.ndarray,
                            max_tries: int = 200) -> list[SearchStep]:
    """Walk the budget ladder from the slimmest configuration upward.

    At each budget, q candidates are grown out of the previous winner by
    adding channels to random blocks until the budget band is reached;
    the lowest-discrepancy candidate wins and seeds the next budget, so
    winners are blockwise non-decreasing along the ladder.
    """
    arch = bank.arch
    rng = np.random.default_rng(np.random.SeedSequence(entropy=plan.seed, spawn_key=(11,)))
    anchor_probs = _anchor_probs(bank, target_x)
    full = arch.full_config().flops

    current = arch.smallest_config()
    steps: list[SearchStep] = []
    for ratio in plan.budgets(arch):
        budget = ratio * full
        lo_f, hi_f = budget * (1 - plan.tolerance), budget * (1 + plan.tolerance)
        hi_f = min(hi_f, full)
        candidates: list[tuple[WidthConfig, bool]] = []
        tries = 0
        while len(candidates) < plan.q and tries < max_tries * plan.q:
            tries += 1
            try:
                candidates.append(_grow_candidate(rng, arch, current, lo_f, hi_f))
            except ValueError:
                continue
        if not candidates:
            raise SearchError(f"could not grow candidates into budget ratio {ratio:.4f}")
        scored = [
            (discrepancy_between(recalibrated(bank, cfg, target_x), anchor_probs, target_x),
             cfg, saturated)
            for cfg, saturated in candidates
        ]
        delta, winner, saturated = min(scored, key=lambda t: t[0])
        steps.append(SearchStep(budget_ratio=ratio, config=winner, delta=delta,
                                saturated=saturated))
        current = winner
    return steps


def correlate(bank: ParamStore, configs, target_x: np.ndarray, target_y: np.ndarray,
              head: str = "a") -> CorrelationReport:
    """Pearson and Spearman correlation between anchor discrepancies and
    true target accuracies over a set of configurations (evaluation only).

    Each config is recalibrated once; its deployment-head predictions feed
    both the discrepancy and (arg-maxed) the accuracy.
    """
    configs = list(configs)
    if len(configs) < 3:
        raise UsageError(f"correlation needs at least 3 configs, got {len(configs)}")
    anchor_probs = _anchor_probs(bank, target_x)
    target_y = np.asarray(target_y)
    deltas, accs = [], []
    for cfg in configs:
        probs = recalibrated(bank, cfg, target_x).predict(target_x, head="a")
        deltas.append(float(((probs - anchor_probs) ** 2).sum()) / len(target_x))
        if head == "a":
            accs.append(float((probs.argmax(axis=1) == target_y).mean()))
        else:
            accs.append(config_accuracy(bank, cfg, target_x, target_y, head=head))
    deltas, accs = np.array(deltas), np.array(accs)
    if np.ptp(deltas) == 0 or np.ptp(accs) == 0:
        raise UsageError("correlation undefined: zero variance in scores or accuracies")
    pearson = float(scipy_stats.pearsonr(deltas, accs).statistic)
    spearman = float(scipy_stats.spearmanr(deltas, accs).statistic)
    return CorrelationReport(pearson=pearson, spearman=spearman, count=len(configs))


def monotonicity_probe(bank: ParamStore, target_x: np.ndarray, target_y: np.ndarray,
                       n: int, rng: np.random.Generator, head: str = "a") -> float:
    """Spearman rank correlation between FLOPs and true target accuracy
    over n spanning configurations (checks that capacity buys accuracy)."""
    if n < 3:
        raise UsageError(f"monotonicity probe needs n >= 3, got {n}")
    configs = sample_configs_spanning(rng, bank.arch, n)
    flops = np.array([c.flops for c in configs])
    accs = np.array([config_accuracy(bank, c, target_x, target_y, head=head) for c in configs])
    if np.ptp(flops) == 0 or np.ptp(accs) == 0:
        raise UsageError("monotonicity probe undefined: zero variance")
    return float(scipy_stats.spearmanr(flops, accs).statistic)


def triangle_bound_terms(bank: ParamStore, config: WidthConfig, target_x: np.ndarray,
                         target_y: np.ndarray) -> tuple[float, float, float]:
    """The three raw squared distances relating a candidate's predictions,
    the anchor's predictions, and the one-hot ground truth:
    (candidate-to-truth, anchor-to-truth, candidate-to-anchor)."""
    k = bank.arch.class_count
    gt = np.eye(k)[np.asarray(target_y)]
    anchor_probs = _anchor_probs(bank, target_x)
    cand_probs = recalibrated(bank, config, target_x).predict(target_x, head="a")
    cand_err = float(((cand_probs - gt) ** 2).sum())
    anchor_err = float(((anchor_probs - gt) ** 2).sum())
    delta_raw = float(((cand_probs - anchor_probs) ** 2).sum())
    return cand_err, anchor_err, delta_raw
