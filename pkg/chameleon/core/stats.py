from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, TypedDict

import numpy as np
from scipy import stats as st

from chameleon.core.errors import ContractError, UndefinedTestError
from chameleon.core.logger import setup_logger

logger = setup_logger(__name__)

# =================================================================================================
# TOUR HEADER: Statistics & Reporting
# =================================================================================================
#
# JOB:
# Everything between raw evaluation numbers and the final comparison:
# 1. aggregate: mean / population std of a variant over seeds (RunReport).
# 2. wilcoxon_signed_rank: paired two-sided test between two variants across datasets.
# 3. holm_correct: step-down multiple-comparison correction of those p-values.
# 4. mean_ranks + cliques: the data behind a critical-difference diagram (no plotting here).
#
# EXACTNESS:
# Up to EXACT_CUTOFF non-zero differences the p-value is exact: scipy.stats.wilcoxon when the
# magnitudes are distinct, an enumeration in half-rank units when they tie. Above it,
# scipy's normal approximation with tie correction (no continuity correction).
#
# =================================================================================================

EXACT_CUTOFF = 15
MIN_PAIRS = 5


class SeedResult(TypedDict):
    seed: int
    loss: float
    accuracy: float


@dataclass
class RunReport:
    dataset: str
    mode: str
    variant: str
    seeds: List[int]
    seed_losses: List[float]
    seed_accuracies: List[float]
    mean_loss: float
    std_loss: float
    mean_accuracy: float
    std_accuracy: float

    @property
    def n_seeds(self) -> int:
        return len(self.seeds)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['n_seeds'] = self.n_seeds
        return data


@dataclass
class SignificanceTable:
    metric: str
    variants: List[str]
    datasets: List[str]
    alpha: float
    mean_ranks: Dict[str, float]
    p_values: Dict[str, Optional[float]] = field(default_factory=dict)
    thresholds: Dict[str, Optional[float]] = field(default_factory=dict)
    rejected: Dict[str, bool] = field(default_factory=dict)
    cliques: List[List[str]] = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> Dict:
        return asdict(self)


def pair_key(a: str, b: str) -> str:
    return f"{a}|{b}"


# --- Aggregation ---

def aggregate(seed_results: Sequence[SeedResult], dataset: str = "", mode: str = "", variant: str = "") -> RunReport:
    if not seed_results:
        raise ContractError("aggregate needs at least one seed")
    losses = np.array([r['loss'] for r in seed_results], dtype=np.float64)
    accs = np.array([r['accuracy'] for r in seed_results], dtype=np.float64)
    return RunReport(
        dataset=dataset,
        mode=mode,
        variant=variant,
        seeds=[int(r['seed']) for r in seed_results],
        seed_losses=losses.tolist(),
        seed_accuracies=accs.tolist(),
        mean_loss=float(losses.mean()),
        std_loss=float(losses.std()),
        mean_accuracy=float(accs.mean()),
        std_accuracy=float(accs.std()),
    )


def improvement_over(reports: Dict[str, RunReport], baseline: str = "random") -> Dict[str, float]:
    """Mean accuracy of every variant minus the baseline's (empty if the baseline is absent)."""
    if baseline not in reports:
        return {}
    ref = reports[baseline].mean_accuracy
    return {name: r.mean_accuracy - ref for name, r in reports.items() if name != baseline}


# --- Wilcoxon signed-rank ---

def _exact_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[t] = number of sign assignments whose doubled positive rank sum equals t."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided p-value of the paired signed-rank test; zero differences are dropped."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"Paired samples must be 1-D of equal length, got {a.shape} and {b.shape}")
    if len(a) < MIN_PAIRS:
        raise ContractError(f"Need at least {MIN_PAIRS} pairs, got {len(a)}")

    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise UndefinedTestError("All paired differences are zero")

    if n > EXACT_CUTOFF:
        res = st.wilcoxon(d, zero_method="wilcox", correction=False, method="approx")
        return float(min(1.0, res.pvalue))

    magnitudes = np.abs(d)
    if len(np.unique(magnitudes)) == n:
        return float(min(1.0, st.wilcoxon(d, zero_method="wilcox", method="exact").pvalue))

    # scipy has no exact null distribution once ranks tie; enumerate it in half-rank units.
    ranks = st.rankdata(magnitudes)
    doubled = np.rint(2 * ranks).astype(np.int64)
    counts = _exact_counts(doubled)
    t2 = int(doubled[d > 0].sum())
    lower = int(counts[:t2 + 1].sum())
    upper = int(counts[t2:].sum())
    return min(1.0, 2.0 * min(lower, upper) / 2 ** n)


# --- Holm ---

@dataclass
class HolmResult:
    rejected: List[bool]
    thresholds: List[float]


def holm_correct(p_values: Sequence[float], alpha: float = 0.05) -> HolmResult:
    """
    Step-down Holm: the i-th smallest p (1-based) is compared with alpha / (m - i + 1);
    rejection stops at the first failure. Results are in input order.
    """
    p = np.asarray(p_values, dtype=np.float64)
    m = len(p)
    if m == 0:
        raise ContractError("holm_correct needs at least one p-value")
    order = np.argsort(p, kind="stable")
    rejected = [False] * m
    thresholds = [0.0] * m
    still_rejecting = True
    for i, idx in enumerate(order):
        threshold = alpha / (m - i)
        thresholds[idx] = threshold
        if still_rejecting and p[idx] <= threshold:
            rejected[idx] = True
        else:
            still_rejecting = False
    return HolmResult(rejected=rejected, thresholds=thresholds)


# --- Ranks ---

def mean_ranks(scores, higher_is_better: bool = True) -> np.ndarray:
    """
    Per-dataset ranks (1 = best, ties averaged) averaged over datasets.
    `scores` is datasets x variants.
    """
    grid = np.asarray(scores, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ContractError(f"Scores must be a non-empty datasets x variants grid, got shape {grid.shape}")
    if not np.isfinite(grid).all():
        raise ContractError("Score matrix has missing cells")
    signed = -grid if higher_is_better else grid
    ranks = np.vstack([st.rankdata(row) for row in signed])
    return ranks.mean(axis=0)


def cliques(ordered: List[str], rejected: Dict[str, bool]) -> List[List[str]]:
    """
    Maximal runs of variants (in mean-rank order) with no significant pair inside them.
    Only runs of two or more are reported.
    """
    def differs(a, b):
        return rejected.get(pair_key(a, b), False) or rejected.get(pair_key(b, a), False)

    groups: List[List[str]] = []
    for i in range(len(ordered)):
        j = i
        while j + 1 < len(ordered) and not any(differs(ordered[x], ordered[j + 1]) for x in range(i, j + 1)):
            j += 1
        group = ordered[i:j + 1]
        if len(group) > 1 and not any(set(group) <= set(g) for g in groups):
            groups.append(group)
    return groups


def significance_table(
    scores,
    variants: List[str],
    datasets: List[str],
    metric: str = "accuracy",
    alpha: float = 0.05,
    higher_is_better: bool = True,
) -> SignificanceTable:
    """Pairwise Wilcoxon tests across datasets with Holm correction, plus mean ranks."""
    grid = np.asarray(scores, dtype=np.float64)
    ranks = mean_ranks(grid, higher_is_better)
    table = SignificanceTable(
        metric=metric,
        variants=list(variants),
        datasets=list(datasets),
        alpha=alpha,
        mean_ranks={v: float(r) for v, r in zip(variants, ranks)},
    )

    keys, p_defined = [], []
    for i, j in combinations(range(len(variants)), 2):
        key = pair_key(variants[i], variants[j])
        table.p_values[key] = None
        table.thresholds[key] = None
        table.rejected[key] = False
        if grid.shape[0] < MIN_PAIRS:
            continue
        try:
            p = wilcoxon_signed_rank(grid[:, i], grid[:, j])
        except UndefinedTestError:
            continue
        table.p_values[key] = p
        keys.append(key)
        p_defined.append(p)

    if grid.shape[0] < MIN_PAIRS:
        table.note = f"{grid.shape[0]} dataset(s): at least {MIN_PAIRS} are needed for the signed-rank test"
        logger.warning(table.note)
    elif p_defined:
        holm = holm_correct(p_defined, alpha)
        for key, rej, thr in zip(keys, holm.rejected, holm.thresholds):
            table.rejected[key] = rej
            table.thresholds[key] = thr

    ordered = sorted(variants, key=lambda v: (table.mean_ranks[v], variants.index(v)))
    table.cliques = cliques(ordered, table.rejected)
    return table
