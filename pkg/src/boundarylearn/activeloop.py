"""Interactive training loop: seeding, query strategies, stop rule, replay.

One session owns a graph, an affinity graph built once up front, and a label
state that grows round by round.  Each round the current strategy proposes a
batch of unlabeled boundaries; once answers arrive the strategy retrains and
diagnostics are appended to the error trace.  All randomness is drawn from
streams derived from ``(rng_seed, purpose, round)``, so a session rebuilt
from its submission history reproduces the original query sequence exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import KMeans

from .affinity import (
    AffinityGraph,
    DEFAULT_NEIGHBORS,
    DEFAULT_VARIANCE_FLOOR,
    build_affinity,
    estimate_sigma,
    partition_blocks,
)
from .forest import ForestConfig, ForestModel, train_forest_on_arrays
from .graph import LabelState, RegionGraph, apply_labels
from .propagation import SolverConfig, solve_propagation
from .rng import child_rng, child_seed

STRATEGIES = ("proposed", "cotrain", "uncertain", "random", "iwal")

UNCERTAIN_BAND = 0.3
IWAL_COMMITTEE = 10
IWAL_P_MIN = 0.1


class BudgetExhaustedError(RuntimeError):
    """No labeling budget remains."""


class EmptyPoolError(RuntimeError):
    """No unlabeled boundary samples remain."""


@dataclass(frozen=True)
class LoopConfig:
    seed_fraction: float = 0.03
    seed_method: str = "kmeans"  # "kmeans" or "max_degree"
    batch_size: int = 10
    budget: Optional[int] = None  # None means min(5000, ceil(0.17 |E|))
    stop_extra: int = 500
    rng_seed: int = 0
    strategy: str = "proposed"
    # The zero-error rule belongs to the dual-view strategy; baselines follow
    # the fixed-budget protocol.  "auto" resolves accordingly.
    stop_rule: str = "auto"  # "auto" | "zero_error" | "budget_only"
    neighbors_k: int = DEFAULT_NEIGHBORS
    sigma_floor: float = DEFAULT_VARIANCE_FLOOR
    forest: ForestConfig = field(default_factory=ForestConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not 0 < self.seed_fraction < 1:
            raise ValueError("seed_fraction must be in (0, 1)")
        if self.seed_method not in ("kmeans", "max_degree"):
            raise ValueError("seed_method must be 'kmeans' or 'max_degree'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.stop_extra < 1:
            raise ValueError("stop_extra must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.stop_rule not in ("auto", "zero_error", "budget_only"):
            raise ValueError("stop_rule must be 'auto', 'zero_error' or 'budget_only'")

    def resolve_stop_rule(self) -> str:
        if self.stop_rule != "auto":
            return self.stop_rule
        return "zero_error" if self.strategy == "proposed" else "budget_only"

    def seed_count(self, n_edges: int) -> int:
        count = math.ceil(self.seed_fraction * n_edges)
        if count < 2:
            raise ValueError("seed fraction yields fewer than 2 seed samples")
        return min(count, n_edges)

    def resolve_budget(self, n_edges: int) -> int:
        budget = self.budget
        if budget is None:
            budget = min(5000, math.ceil(0.17 * n_edges))
        budget = min(budget, n_edges)
        if budget < self.seed_count(n_edges):
            raise ValueError("budget smaller than the seed set")
        return budget


@dataclass(frozen=True)
class QueryBatch:
    """Edges to ask about, ordered by descending priority."""

    edge_ids: Tuple[int, ...]
    scores: Tuple[float, ...]
    round_index: int
    # Issue-time per-edge view scores, used for query-error accounting.
    clf_confidence: Tuple[float, ...] = ()
    prop_estimate: Tuple[Optional[float], ...] = ()


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    labels_used: int
    clf_query_errors: Optional[int]
    prop_query_errors: Optional[int]
    mutually_exclusive_errors: Optional[int]
    pool_accuracy: Optional[float]


class ErrorTrace:
    """Per-round diagnostics; rounds are strictly increasing."""

    def __init__(self, records: Optional[Sequence[RoundRecord]] = None):
        self.records: List[RoundRecord] = list(records or [])

    def append(self, record: RoundRecord) -> None:
        if self.records and record.round_index <= self.records[-1].round_index:
            raise ValueError("round indices must be strictly increasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "round", "labels_used", "clf_query_err", "prop_query_err",
                "mutual_excl_err", "pool_accuracy",
            ])
            for r in self.records:
                writer.writerow([
                    r.round_index, r.labels_used,
                    "" if r.clf_query_errors is None else r.clf_query_errors,
                    "" if r.prop_query_errors is None else r.prop_query_errors,
                    "" if r.mutually_exclusive_errors is None else r.mutually_exclusive_errors,
                    "" if r.pool_accuracy is None else repr(r.pool_accuracy),
                ])


def _hard_sign(values: np.ndarray) -> np.ndarray:
    """Map confidences to hard labels; 0 counts as the negative class."""
    return np.where(np.asarray(values) > 0, 1, -1)


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def _standardize(features: np.ndarray) -> np.ndarray:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (features - mean) / std


def seed_initial(graph: RegionGraph, aff: AffinityGraph, config: LoopConfig) -> List[int]:
    """Pick the initial batch to label, spread over the feature space."""
    count = config.seed_count(graph.n_edges)
    if count >= graph.n_edges:
        return list(range(graph.n_edges))
    if config.seed_method == "kmeans":
        return _seed_kmeans(graph, count, config.rng_seed)
    return _seed_max_degree(aff, count)


def _seed_kmeans(graph: RegionGraph, count: int, rng_seed: int) -> List[int]:
    z = _standardize(graph.features)
    km = KMeans(
        n_clusters=count,
        init="k-means++",
        n_init=1,
        max_iter=100,
        random_state=child_seed(rng_seed, "seed-kmeans") % (2**32),
    ).fit(z)
    centers = km.cluster_centers_
    d2 = (
        np.einsum("ij,ij->i", centers, centers)[:, None]
        + np.einsum("ij,ij->i", z, z)[None, :]
        - 2.0 * centers @ z.T
    )
    chosen: List[int] = []
    taken = set()
    for c in range(count):
        order = np.argsort(d2[c], kind="stable")
        for cand in order:
            cand = int(cand)
            if cand not in taken:
                chosen.append(cand)
                taken.add(cand)
                break
    return sorted(chosen)


def _seed_max_degree(aff: AffinityGraph, count: int) -> List[int]:
    order = np.lexsort((np.arange(aff.n), -aff.degrees))
    w = aff.weights.tocsr()
    chosen: List[int] = []
    blocked = np.zeros(aff.n, dtype=bool)
    for cand in order:
        if len(chosen) == count:
            break
        if blocked[cand]:
            continue
        chosen.append(int(cand))
        blocked[cand] = True
        blocked[w.indices[w.indptr[cand]:w.indptr[cand + 1]]] = True
    if len(chosen) < count:
        # Not enough mutually non-adjacent points: relax and fill by degree.
        taken = set(chosen)
        for cand in order:
            if len(chosen) == count:
                break
            if int(cand) not in taken:
                chosen.append(int(cand))
                taken.add(int(cand))
    return sorted(chosen)


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

def rank_disagreement(h_c: np.ndarray, y_u: np.ndarray) -> np.ndarray:
    """Disagreement score 1 - h*y, in [0, 2] for bounded inputs."""
    h_c = np.asarray(h_c, dtype=np.float64)
    y_u = np.asarray(y_u, dtype=np.float64)
    if h_c.shape != y_u.shape:
        raise ValueError("score vectors must have identical shape")
    return 1.0 - h_c * y_u


def _top_by_score(pool: np.ndarray, scores: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Highest-score first, ties broken by ascending edge id."""
    order = np.lexsort((pool, -scores))[:k]
    return pool[order], scores[order]


# ---------------------------------------------------------------------------
# Strategies.  Each owns its models; `refit` is called after every label
# ingestion (including the seed round) and `propose` picks the next batch.
# ---------------------------------------------------------------------------

class _StrategyBase:
    name: str = ""

    def __init__(self, session: "ActiveSession"):
        self.session = session
        self._cached_pool: Optional[np.ndarray] = None
        self._cached_h: Optional[np.ndarray] = None

    def refit(self, round_index: int) -> None:
        raise NotImplementedError

    def propose(self, pool: np.ndarray, k: int, round_index: int) -> QueryBatch:
        raise NotImplementedError

    def after_answers(self, batch: QueryBatch, answers: Mapping[int, int]) -> None:
        pass

    def predictor(self):
        """Model whose accuracy represents this strategy."""
        raise NotImplementedError

    def cache_pool_scores(self, pool: np.ndarray) -> None:
        """Score the pool once per round; repeated lookups reuse the result."""
        self._cached_pool = pool
        self._cached_h = self.predictor().predict_confidence(
            self.session.graph.features[pool]
        )

    def pool_confidence(self, pool: np.ndarray) -> np.ndarray:
        if (
            self._cached_pool is not None
            and self._cached_pool.size == pool.size
            and np.array_equal(self._cached_pool, pool)
        ):
            return self._cached_h
        return self.predictor().predict_confidence(self.session.graph.features[pool])

    def pool_propagation(self, pool: np.ndarray) -> Optional[np.ndarray]:
        return None

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class ProposedStrategy(_StrategyBase):
    """Query where the discriminative and generative views disagree most."""

    name = "proposed"

    def __init__(self, session):
        super().__init__(session)
        self.model: Optional[ForestModel] = None
        self._y_u: Optional[np.ndarray] = None
        self._pool: Optional[np.ndarray] = None

    def refit(self, round_index):
        s = self.session
        self.model = s.train_round_forest(round_index)
        pool = s.pool_array()
        self._pool = pool
        if pool.size:
            l_uu, w_ul = partition_blocks(s.affinity, s.label_state)
            result = solve_propagation(
                l_uu, w_ul, s.label_state.label_vector(), s.config.solver,
                unlabeled_ids=pool,
            )
            self._y_u = result.y_u
        else:
            self._y_u = np.zeros(0)

    def propagation_estimates(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._pool, self._y_u

    def pool_propagation(self, pool):
        assert self._pool is not None and np.array_equal(self._pool, pool)
        return self._y_u

    def propose(self, pool, k, round_index):
        h = self.pool_confidence(pool)
        y = np.clip(self._y_u, -1.0, 1.0)
        scores = rank_disagreement(h, y)
        ids, best = _top_by_score(pool, scores, k)
        pos = {int(e): i for i, e in enumerate(pool)}
        sel = [pos[int(e)] for e in ids]
        return QueryBatch(
            edge_ids=tuple(int(e) for e in ids),
            scores=tuple(float(v) for v in best),
            round_index=round_index,
            clf_confidence=tuple(float(h[i]) for i in sel),
            prop_estimate=tuple(float(self._y_u[i]) for i in sel),
        )

    def predictor(self):
        return self.model

    def state_dict(self):
        return {}


class UncertainStrategy(_StrategyBase):
    """Query inside the low-confidence band, most uncertain first."""

    name = "uncertain"

    def __init__(self, session):
        super().__init__(session)
        self.model: Optional[ForestModel] = None

    def refit(self, round_index):
        self.model = self.session.train_round_forest(round_index)

    def propose(self, pool, k, round_index):
        h = self.pool_confidence(pool)
        absh = np.abs(h)
        in_band = absh <= UNCERTAIN_BAND
        order_band = np.lexsort((pool[in_band], absh[in_band]))
        ids = list(pool[in_band][order_band][:k])
        if len(ids) < k:
            out = ~in_band
            order_out = np.lexsort((pool[out], absh[out]))
            ids.extend(pool[out][order_out][: k - len(ids)])
        ids_arr = np.asarray(ids, dtype=np.int64)
        pos = {int(e): i for i, e in enumerate(pool)}
        sel = [pos[int(e)] for e in ids_arr]
        return QueryBatch(
            edge_ids=tuple(int(e) for e in ids_arr),
            scores=tuple(1.0 - abs(float(h[i])) for i in sel),
            round_index=round_index,
            clf_confidence=tuple(float(h[i]) for i in sel),
            prop_estimate=(None,) * len(sel),
        )

    def predictor(self):
        return self.model


class RandomStrategy(_StrategyBase):
    name = "random"

    def __init__(self, session):
        super().__init__(session)
        self.model: Optional[ForestModel] = None

    def refit(self, round_index):
        self.model = self.session.train_round_forest(round_index)

    def propose(self, pool, k, round_index):
        rng = child_rng(self.session.config.rng_seed, "random-queries", round_index)
        ids = rng.choice(pool, size=min(k, pool.size), replace=False)
        h = self.predictor().predict_confidence(self.session.graph.features[ids])
        return QueryBatch(
            edge_ids=tuple(int(e) for e in ids),
            scores=(0.0,) * len(ids),
            round_index=round_index,
            clf_confidence=tuple(float(v) for v in h),
            prop_estimate=(None,) * len(ids),
        )

    def predictor(self):
        return self.model


class _MeanModel:
    """Average of two confidence models; used to score co-training."""

    def __init__(self, a: ForestModel, b: ForestModel):
        self.a, self.b = a, b

    def predict_confidence(self, x: np.ndarray) -> np.ndarray:
        return 0.5 * (self.a.predict_confidence(x) + self.b.predict_confidence(x))


class CotrainStrategy(_StrategyBase):
    """Two half-trained hypotheses querying their mutual disagreements."""

    name = "cotrain"

    def __init__(self, session):
        super().__init__(session)
        self.set_a: List[int] = []
        self.set_b: List[int] = []
        self.model_a: Optional[ForestModel] = None
        self.model_b: Optional[ForestModel] = None

    def _split_initial(self, seed_ids: Sequence[int]) -> None:
        labels = self.session.label_state.labels
        rng = child_rng(self.session.config.rng_seed, "cotrain-split")
        ids = np.asarray(sorted(seed_ids), dtype=np.int64)
        for attempt in range(10):
            perm = rng.permutation(ids)
            half = ids.size // 2
            a, b = perm[:half], perm[half:]
            if (len({labels[int(i)] for i in a}) == 2
                    and len({labels[int(i)] for i in b}) == 2):
                self.set_a = sorted(int(i) for i in a)
                self.set_b = sorted(int(i) for i in b)
                return
        raise DegenerateSplitError(
            "could not split the seed set into two two-class halves"
        )

    def refit(self, round_index):
        s = self.session
        if not self.set_a and not self.set_b:
            self._split_initial(s.label_state.labeled_ids)
        cfg = s.round_forest_config(round_index)
        feats, labels = s.graph.features, s.label_state.labels
        ya = np.array([labels[i] for i in self.set_a], dtype=np.float64)
        yb = np.array([labels[i] for i in self.set_b], dtype=np.float64)
        self.model_a = train_forest_on_arrays(
            feats[self.set_a], ya, replace(cfg, rng_seed=child_seed(cfg.rng_seed, "a")))
        self.model_b = train_forest_on_arrays(
            feats[self.set_b], yb, replace(cfg, rng_seed=child_seed(cfg.rng_seed, "b")))

    def propose(self, pool, k, round_index):
        x = self.session.graph.features[pool]
        ha = self.model_a.predict_confidence(x)
        hb = self.model_b.predict_confidence(x)
        disagree = _hard_sign(ha) != _hard_sign(hb)
        ids = list(pool[disagree][np.argsort(pool[disagree], kind="stable")][:k])
        if len(ids) < k:
            rest = ~disagree
            gap = np.abs(ha - hb)[rest]
            order = np.lexsort((pool[rest], -gap))
            ids.extend(pool[rest][order][: k - len(ids)])
        ids_arr = np.asarray(ids, dtype=np.int64)
        pos = {int(e): i for i, e in enumerate(pool)}
        sel = [pos[int(e)] for e in ids_arr]
        h_mean = 0.5 * (ha + hb)
        self._last_ha = {int(pool[i]): float(ha[i]) for i in sel}
        self._last_hb = {int(pool[i]): float(hb[i]) for i in sel}
        # Sign disagreements carry the maximal score; fill-ins their gap (< 2).
        scores = tuple(
            2.0 if disagree[i] else float(np.abs(ha - hb)[i]) for i in sel
        )
        return QueryBatch(
            edge_ids=tuple(int(e) for e in ids_arr),
            scores=scores,
            round_index=round_index,
            clf_confidence=tuple(float(h_mean[i]) for i in sel),
            prop_estimate=(None,) * len(sel),
        )

    def after_answers(self, batch, answers):
        if batch.round_index == 0:
            return  # seed labels are routed by the initial half-split
        for eid in batch.edge_ids:
            answer = answers[eid]
            if _hard_sign(np.array([self._last_ha[eid]]))[0] != answer:
                self.set_a.append(eid)
            if _hard_sign(np.array([self._last_hb[eid]]))[0] != answer:
                self.set_b.append(eid)
        self.set_a.sort()
        self.set_b.sort()

    def predictor(self):
        return _MeanModel(self.model_a, self.model_b)

    def state_dict(self):
        return {"set_a": list(self.set_a), "set_b": list(self.set_b)}

    def load_state_dict(self, state):
        self.set_a = [int(i) for i in state["set_a"]]
        self.set_b = [int(i) for i in state["set_b"]]


class DegenerateSplitError(RuntimeError):
    """Co-training could not find a two-class half-split of the seed set."""


class IwalBootstrapStrategy(_StrategyBase):
    """Committee-spread rejection sampling with importance-weighted refits."""

    name = "iwal"

    def __init__(self, session):
        super().__init__(session)
        self.model: Optional[ForestModel] = None
        self.committee: List[ForestModel] = []
        self.weights: Dict[int, float] = {}

    def refit(self, round_index):
        s = self.session
        labeled = list(s.label_state.labeled_ids)
        for eid in labeled:
            self.weights.setdefault(eid, 1.0)
        x = s.graph.features[labeled]
        y = s.label_state.label_vector()
        w = np.array([self.weights[i] for i in labeled])
        cfg = s.round_forest_config(round_index)
        self.model = train_forest_on_arrays(x, y, cfg, sample_weight=w)
        self.committee = []
        n = len(labeled)
        for b in range(IWAL_COMMITTEE):
            rng = child_rng(s.config.rng_seed, "iwal-boot", round_index, b)
            take = rng.integers(n, size=n)
            if np.unique(y[take]).size < 2:
                take = np.arange(n)  # degenerate resample: fall back to full set
            member = train_forest_on_arrays(
                x[take], y[take],
                replace(cfg, rng_seed=child_seed(cfg.rng_seed, "member", b)),
                sample_weight=w[take],
            )
            self.committee.append(member)

    def query_probability(self, x: np.ndarray) -> np.ndarray:
        votes = np.stack([m.predict_confidence(x) for m in self.committee])
        spread = (votes.max(axis=0) - votes.min(axis=0)) / 2.0
        return IWAL_P_MIN + (1.0 - IWAL_P_MIN) * spread

    def propose(self, pool, k, round_index):
        s = self.session
        x = s.graph.features[pool]
        p = self.query_probability(x)
        rng = child_rng(s.config.rng_seed, "iwal-sample", round_index)
        perm = rng.permutation(pool.size)
        draws = rng.random(pool.size)
        chosen: List[int] = []
        probs: List[float] = []
        for j in perm:
            if len(chosen) == k:
                break
            if draws[j] <= p[j]:
                chosen.append(int(pool[j]))
                probs.append(float(p[j]))
        if not chosen:
            # Rejection pass sampled nothing; take the highest-spread edge.
            j = int(np.lexsort((pool, -p))[0])
            chosen, probs = [int(pool[j])], [float(p[j])]
        # Membership comes from the sampling pass; present highest spread first.
        order = np.lexsort((np.asarray(chosen), -np.asarray(probs)))
        chosen = [chosen[i] for i in order]
        probs = [probs[i] for i in order]
        h = self.model.predict_confidence(s.graph.features[chosen])
        self._pending_probs = dict(zip(chosen, probs))
        return QueryBatch(
            edge_ids=tuple(chosen),
            scores=tuple(probs),
            round_index=round_index,
            clf_confidence=tuple(float(v) for v in h),
            prop_estimate=(None,) * len(chosen),
        )

    def after_answers(self, batch, answers):
        if batch.round_index == 0:
            return  # seed labels keep unit weight
        for eid in batch.edge_ids:
            self.weights[eid] = 1.0 / self._pending_probs[eid]

    def predictor(self):
        return self.model

    def state_dict(self):
        return {"weights": {str(k): v for k, v in self.weights.items()}}

    def load_state_dict(self, state):
        self.weights = {int(k): float(v) for k, v in state["weights"].items()}


_STRATEGY_CLASSES = {
    cls.name: cls
    for cls in (ProposedStrategy, UncertainStrategy, RandomStrategy,
                CotrainStrategy, IwalBootstrapStrategy)
}


def strategy_uncertain(h_c: np.ndarray, pool: Sequence[int], k: int) -> List[int]:
    """Standalone band-filter query rule (uncertainty sampling)."""
    pool = np.asarray(pool, dtype=np.int64)
    if pool.size == 0:
        raise EmptyPoolError("no unlabeled samples")
    h = np.asarray(h_c, dtype=np.float64)
    absh = np.abs(h)
    in_band = absh <= UNCERTAIN_BAND
    ids = list(pool[in_band][np.lexsort((pool[in_band], absh[in_band]))][:k])
    if len(ids) < k:
        out = ~in_band
        ids.extend(pool[out][np.lexsort((pool[out], absh[out]))][: k - len(ids)])
    return [int(i) for i in ids]


# ---------------------------------------------------------------------------
# Stop rule
# ---------------------------------------------------------------------------

CONTINUE, STOPPING_PHASE, STOP = "continue", "stopping_phase", "stop"


def check_stop(trace: ErrorTrace, config: LoopConfig, budget: int) -> str:
    """Stop once the query error has been zero and stop_extra more labels came in.

    Budget exhaustion always stops.  The stopping phase starts at the first
    round whose query-set error (classifier view) is zero.
    """
    if len(trace) == 0:
        raise ValueError("trace is empty")
    last = trace[-1]
    if last.labels_used >= budget:
        return STOP
    zero_round = None
    for rec in trace:
        if rec.clf_query_errors == 0:
            zero_round = rec
            break
    if zero_round is None:
        return CONTINUE
    extra = last.labels_used - zero_round.labels_used
    return STOP if extra >= config.stop_extra else STOPPING_PHASE


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------

class ActiveSession:
    """Single-writer interactive session advancing strictly round by round."""

    def __init__(
        self,
        graph: RegionGraph,
        config: LoopConfig,
        affinity: Optional[AffinityGraph] = None,
    ):
        self.graph = graph
        self.config = config
        self.budget = config.resolve_budget(graph.n_edges)
        if affinity is None:
            acfg = estimate_sigma(graph, floor=config.sigma_floor,
                                  neighbors_k=config.neighbors_k)
            affinity = build_affinity(graph, acfg)
        if affinity.n != graph.n_edges:
            raise ValueError("affinity graph does not match the region graph")
        self.affinity = affinity
        self.label_state = LabelState.initial(graph.n_edges)
        self.strategy: _StrategyBase = _STRATEGY_CLASSES[config.strategy](self)
        self.trace = ErrorTrace()
        self.round_index = 0
        self.stopped = False
        self.stop_reason: Optional[str] = None
        self._pending: Optional[QueryBatch] = None
        self._history: List[Tuple[Tuple[int, ...], Tuple[int, ...]]] = []

    # -- querying ----------------------------------------------------------

    def pool_array(self) -> np.ndarray:
        ids = self.label_state.unlabeled_ids
        return np.fromiter(ids, dtype=np.int64, count=len(ids))

    def remaining_budget(self) -> int:
        return self.budget - self.label_state.n_labeled

    def pending_batch(self) -> QueryBatch:
        """Current batch awaiting answers, issuing a fresh one if needed."""
        if self.stopped:
            raise BudgetExhaustedError(self.stop_reason or "session stopped")
        if self._pending is None:
            self._pending = self._issue()
        return self._pending

    def _issue(self) -> QueryBatch:
        pool = self.pool_array()
        if pool.size == 0:
            raise EmptyPoolError("no unlabeled samples remain")
        remaining = self.remaining_budget()
        if remaining <= 0:
            raise BudgetExhaustedError("labeling budget exhausted")
        if self.round_index == 0:
            ids = seed_initial(self.graph, self.affinity, self.config)
            ids = ids[:remaining]
            return QueryBatch(
                edge_ids=tuple(ids),
                scores=(0.0,) * len(ids),
                round_index=0,
                clf_confidence=(0.0,) * len(ids),
                prop_estimate=(None,) * len(ids),
            )
        k = min(self.config.batch_size, remaining, pool.size)
        return self.strategy.propose(pool, k, self.round_index)

    def next_queries(self) -> QueryBatch:
        return self.pending_batch()

    # -- answering ---------------------------------------------------------

    def submit(self, answers: Mapping[int, int]) -> RoundRecord:
        """Ingest answers for the pending batch and advance one round."""
        batch = self.pending_batch()
        expected = set(batch.edge_ids)
        got = {int(k) for k in answers}
        if got != expected:
            missing = sorted(expected - got)[:5]
            extra = sorted(got - expected)[:5]
            raise ValueError(
                f"answers must cover exactly the pending batch "
                f"(missing={missing}, unexpected={extra})"
            )
        answers = {int(k): int(v) for k, v in answers.items()}

        clf_err = prop_err = None
        if batch.round_index > 0:
            preds = _hard_sign(np.array(batch.clf_confidence))
            truth = np.array([answers[e] for e in batch.edge_ids])
            clf_err = int((preds != truth).sum())
            if all(v is not None for v in batch.prop_estimate):
                p = _hard_sign(np.array([v for v in batch.prop_estimate]))
                prop_err = int((p != truth).sum())

        self.label_state = apply_labels(self.label_state, answers)
        self._history.append(
            (batch.edge_ids, tuple(answers[e] for e in batch.edge_ids))
        )
        self.strategy.after_answers(batch, answers)
        self.strategy.refit(self.round_index)
        self.strategy.cache_pool_scores(self.pool_array())

        record = self._make_record(batch.round_index, clf_err, prop_err)
        self.trace.append(record)
        self._pending = None
        self.round_index += 1

        if self.config.resolve_stop_rule() == "zero_error":
            verdict = check_stop(self.trace, self.config, self.budget)
        else:
            verdict = STOP if record.labels_used >= self.budget else CONTINUE
        if verdict == STOP or self.pool_array().size == 0:
            self.stopped = True
            self.stop_reason = (
                "budget exhausted" if record.labels_used >= self.budget
                else "pool exhausted" if self.pool_array().size == 0
                else "query error zero and stop_extra answered"
            )
        return record

    def _make_record(self, round_index: int, clf_err, prop_err) -> RoundRecord:
        pool = self.pool_array()
        pool_acc = None
        mutual = None
        if self.graph.has_full_labels and pool.size:
            truth = self.graph.true_labels[pool]
            h = self.strategy.pool_confidence(pool)
            clf_wrong = _hard_sign(h) != truth
            pool_acc = float(1.0 - clf_wrong.mean())
            y = self.strategy.pool_propagation(pool)
            if y is not None:
                prop_wrong = _hard_sign(y) != truth
                mutual = int((clf_wrong ^ prop_wrong).sum())
        return RoundRecord(
            round_index=round_index,
            labels_used=self.label_state.n_labeled,
            clf_query_errors=clf_err,
            prop_query_errors=prop_err,
            mutually_exclusive_errors=mutual,
            pool_accuracy=pool_acc,
        )

    # -- helpers -----------------------------------------------------------

    def round_forest_config(self, round_index: int) -> ForestConfig:
        base = self.config.forest
        return replace(
            base, rng_seed=child_seed(self.config.rng_seed, "forest", round_index)
        )

    def train_round_forest(self, round_index: int) -> ForestModel:
        labeled = np.fromiter(self.label_state.labeled_ids, dtype=np.int64)
        return train_forest_on_arrays(
            self.graph.features[labeled],
            self.label_state.label_vector(),
            self.round_forest_config(round_index),
        )

    def current_model(self):
        return self.strategy.predictor()

    # -- persistence -------------------------------------------------------

    def history(self) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        return list(self._history)

    @classmethod
    def replay_history(
        cls,
        graph: RegionGraph,
        config: LoopConfig,
        history: Sequence[Tuple[Sequence[int], Sequence[int]]],
        affinity: Optional[AffinityGraph] = None,
    ) -> "ActiveSession":
        """Rebuild a session by resubmitting a stored answer history.

        Every recomputed batch must match the stored one; determinism makes
        this an exact state reconstruction.
        """
        session = cls(graph, config, affinity=affinity)
        for ids, labs in history:
            batch = session.pending_batch()
            if tuple(batch.edge_ids) != tuple(int(i) for i in ids):
                raise ValueError(
                    f"stored history diverges at round {batch.round_index}"
                )
            session.submit({int(i): int(v) for i, v in zip(ids, labs)})
        return session


# ---------------------------------------------------------------------------
# Replay oracle
# ---------------------------------------------------------------------------

def run_session_with_oracle(session: ActiveSession) -> ActiveSession:
    """Answer every batch from the graph's stored labels until the stop rule fires."""
    truth = session.graph.true_labels
    while not session.stopped:
        try:
            batch = session.pending_batch()
        except (BudgetExhaustedError, EmptyPoolError):
            break
        session.submit({e: int(truth[e]) for e in batch.edge_ids})
    return session


def run_replay(
    graph: RegionGraph,
    config: LoopConfig,
    trials: int,
    affinity: Optional[AffinityGraph] = None,
) -> List[Tuple[object, ErrorTrace]]:
    """Run the loop ``trials`` times with independent seeds; returns models and traces."""
    if not graph.has_full_labels:
        raise ValueError("replay needs a true_label on every edge")
    if affinity is None:
        acfg = estimate_sigma(graph, floor=config.sigma_floor,
                              neighbors_k=config.neighbors_k)
        affinity = build_affinity(graph, acfg)
    out = []
    for t in range(trials):
        trial_cfg = replace(config, rng_seed=child_seed(config.rng_seed, "trial", t))
        session = ActiveSession(graph, trial_cfg, affinity=affinity)
        run_session_with_oracle(session)
        out.append((session.current_model(), session.trace))
    return out
