"""HTTP session service for interactive labeling.

Wraps :class:`ActiveSession` behind a JSON API: create a session from an
uploaded graph, poll the pending query batch, submit answers, watch the
error trace, and download the trained model.  Sessions are persisted as a
graph file plus the full answer history; restoring replays the history,
which reproduces the exact state thanks to end-to-end determinism.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .activeloop import (
    ActiveSession,
    BudgetExhaustedError,
    EmptyPoolError,
    LoopConfig,
)
from .forest import ForestConfig
from .graph import (
    BoundarySample,
    GraphFormatError,
    RegionGraph,
    SuperpixelNode,
    load_region_graph,
    save_region_graph,
)
from .propagation import SolverConfig

PHASE_AWAITING = "awaiting_labels"
PHASE_COMPUTING = "computing"
PHASE_STOPPED = "stopped"


# ---------------------------------------------------------------------------
# Wire models
# ---------------------------------------------------------------------------

class NodePayload(BaseModel):
    id: int
    size: int = Field(ge=1)
    true_body: Optional[int] = None


class EdgePayload(BaseModel):
    id: int
    u: int
    v: int
    x: List[float]
    true_label: Optional[int] = None


class GraphPayload(BaseModel):
    feature_dim: int = Field(ge=1)
    nodes: List[NodePayload]
    edges: List[EdgePayload]


class ForestPayload(BaseModel):
    n_trees: int = 100
    max_depth: int = 20
    min_leaf: int = 1
    features_per_split: Optional[int] = None
    bootstrap: bool = True


class SolverPayload(BaseModel):
    rel_tolerance: float = 1e-8
    max_iterations: Optional[int] = None
    preconditioner: str = "jacobi"


class LoopConfigPayload(BaseModel):
    seed_fraction: float = 0.03
    seed_method: str = "kmeans"
    batch_size: int = 10
    budget: Optional[int] = None
    stop_extra: int = 500
    rng_seed: int = 0
    strategy: str = "proposed"
    stop_rule: str = "auto"
    neighbors_k: int = 10
    sigma_floor: float = 1e-8
    forest: ForestPayload = ForestPayload()
    solver: SolverPayload = SolverPayload()

    def to_config(self) -> LoopConfig:
        return LoopConfig(
            seed_fraction=self.seed_fraction,
            seed_method=self.seed_method,
            batch_size=self.batch_size,
            budget=self.budget,
            stop_extra=self.stop_extra,
            rng_seed=self.rng_seed,
            strategy=self.strategy,
            stop_rule=self.stop_rule,
            neighbors_k=self.neighbors_k,
            sigma_floor=self.sigma_floor,
            forest=ForestConfig(rng_seed=self.rng_seed, **self.forest.model_dump()),
            solver=SolverConfig(**self.solver.model_dump()),
        )


class CreateSessionRequest(BaseModel):
    graph: GraphPayload
    config: LoopConfigPayload = LoopConfigPayload()


class QueryCard(BaseModel):
    edge_id: int
    u: int
    v: int
    size_u: int
    size_v: int
    features: List[float]
    features_standardized: List[float]
    clf_confidence: float
    prop_estimate: Optional[float]
    score: float


class QueriesResponse(BaseModel):
    session_id: str
    round: int
    batch_token: str
    batch_size: int
    is_seed_batch: bool
    queries: List[QueryCard]


class LabelsRequest(BaseModel):
    batch_token: str
    answers: Dict[int, int]


class TraceRow(BaseModel):
    round: int
    labels_used: int
    clf_query_err: Optional[int]
    prop_query_err: Optional[int]
    mutual_excl_err: Optional[int]
    pool_accuracy: Optional[float]


class StatusResponse(BaseModel):
    session_id: str
    phase: str
    strategy: str
    round: int
    labels_used: int
    budget: int
    seed_size: int
    pool_size: int
    stop_reason: Optional[str]
    stopping_phase: bool
    created_at: float
    updated_at: float
    trace: List[TraceRow]


class SessionCreated(BaseModel):
    session_id: str
    status: StatusResponse


# ---------------------------------------------------------------------------
# Session records and store
# ---------------------------------------------------------------------------

def graph_from_payload(payload: GraphPayload) -> RegionGraph:
    nodes = [SuperpixelNode(n.id, n.size, n.true_body) for n in payload.nodes]
    edges = []
    for e in payload.edges:
        x = np.asarray(e.x, dtype=np.float64)
        if x.shape[0] != payload.feature_dim:
            raise ValueError(
                f"edge {e.id}: feature dimension {x.shape[0]} != {payload.feature_dim}"
            )
        edges.append(BoundarySample(e.id, e.u, e.v, x, e.true_label))
    return RegionGraph(nodes, edges)


def _batch_token(session_id: str, round_index: int) -> str:
    raw = f"{session_id}:{round_index}".encode()
    return hashlib.sha256(raw).hexdigest()[:16]


class SessionRecord:
    def __init__(self, session_id: str, session: ActiveSession,
                 created_at: Optional[float] = None):
        self.id = session_id
        self.session = session
        self.lock = threading.Lock()
        self.created_at = created_at or time.time()
        self.updated_at = self.created_at
        self.computing = False
        mean = session.graph.features.mean(axis=0)
        std = session.graph.features.std(axis=0)
        self._std = (mean, np.where(std > 0, std, 1.0))

    @property
    def phase(self) -> str:
        if self.session.stopped:
            return PHASE_STOPPED
        return PHASE_COMPUTING if self.computing else PHASE_AWAITING

    def standardized(self, x: np.ndarray) -> np.ndarray:
        mean, std = self._std
        return (x - mean) / std


class SessionStore:
    """In-memory session map with JSON snapshots under a data directory."""

    def __init__(self, data_dir: Optional[Path] = None):
        self.data_dir = Path(data_dir) if data_dir else None
        self._records: Dict[str, SessionRecord] = {}
        self._lock = threading.Lock()

    def _session_dir(self, session_id: str) -> Optional[Path]:
        if self.data_dir is None:
            return None
        return self.data_dir / "sessions" / session_id

    def add(self, record: SessionRecord) -> None:
        with self._lock:
            self._records[record.id] = record
        self.persist(record)

    def get(self, session_id: str) -> SessionRecord:
        with self._lock:
            rec = self._records.get(session_id)
        if rec is not None:
            return rec
        rec = self._restore(session_id)
        if rec is None:
            raise HTTPException(status_code=404, detail="unknown session")
        with self._lock:
            self._records.setdefault(session_id, rec)
            return self._records[session_id]

    def persist(self, record: SessionRecord) -> None:
        sdir = self._session_dir(record.id)
        if sdir is None:
            return
        sdir.mkdir(parents=True, exist_ok=True)
        graph_path = sdir / "graph.jsonl"
        if not graph_path.exists():
            save_region_graph(record.session.graph, graph_path)
        state = {
            "session_id": record.id,
            "created_at": record.created_at,
            "updated_at": record.updated_at,
            "config": _config_to_dict(record.session.config),
            "history": [
                {"edge_ids": list(ids), "labels": list(labs)}
                for ids, labs in record.session.history()
            ],
        }
        tmp = sdir / "state.json.tmp"
        tmp.write_text(json.dumps(state))
        tmp.replace(sdir / "state.json")

    def _restore(self, session_id: str) -> Optional[SessionRecord]:
        sdir = self._session_dir(session_id)
        if sdir is None or not (sdir / "state.json").exists():
            return None
        state = json.loads((sdir / "state.json").read_text())
        graph = load_region_graph(sdir / "graph.jsonl")
        config = _config_from_dict(state["config"])
        history = [(h["edge_ids"], h["labels"]) for h in state["history"]]
        session = ActiveSession.replay_history(graph, config, history)
        record = SessionRecord(session_id, session, created_at=state["created_at"])
        record.updated_at = state["updated_at"]
        return record


def _config_to_dict(config: LoopConfig) -> dict:
    d = asdict(config)
    return d


def _config_from_dict(d: dict) -> LoopConfig:
    d = dict(d)
    d["forest"] = ForestConfig(**d["forest"])
    d["solver"] = SolverConfig(**d["solver"])
    return LoopConfig(**d)


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------

def create_app(data_dir: Optional[os.PathLike] = None) -> FastAPI:
    if data_dir is None:
        data_dir = os.environ.get("DATA_DIR") or None
    store = SessionStore(Path(data_dir) if data_dir else None)
    app = FastAPI(title="boundarylearn session service")
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/sessions", response_model=SessionCreated, status_code=201)
    def create_session(request: CreateSessionRequest):
        try:
            graph = graph_from_payload(request.graph)
            config = request.config.to_config()
            session = ActiveSession(graph, config)
            session.pending_batch()  # materialize the seed batch up front
        except (ValueError, GraphFormatError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        record = SessionRecord(uuid.uuid4().hex, session)
        store.add(record)
        return SessionCreated(session_id=record.id, status=_status(record))

    @app.get("/sessions/{session_id}/status", response_model=StatusResponse)
    def session_status(session_id: str):
        return _status(store.get(session_id))

    @app.get("/sessions/{session_id}/queries", response_model=QueriesResponse)
    def session_queries(session_id: str):
        record = store.get(session_id)
        with record.lock:
            if record.session.stopped:
                raise HTTPException(
                    status_code=409,
                    detail=f"session stopped ({record.session.stop_reason})",
                )
            batch = record.session.pending_batch()
            return _queries_response(record, batch)

    @app.post("/sessions/{session_id}/labels", response_model=StatusResponse)
    def submit_labels(session_id: str, request: LabelsRequest):
        record = store.get(session_id)
        with record.lock:
            session = record.session
            if session.stopped:
                raise HTTPException(
                    status_code=409,
                    detail=f"session stopped ({session.stop_reason})",
                )
            batch = session.pending_batch()
            expected = _batch_token(record.id, batch.round_index)
            if request.batch_token != expected:
                raise HTTPException(status_code=409, detail="stale batch token")
            invalid = {k: v for k, v in request.answers.items() if v not in (-1, 1)}
            if invalid:
                raise HTTPException(
                    status_code=422,
                    detail=f"labels must be -1 or +1: {sorted(invalid)[:5]}",
                )
            record.computing = True
            try:
                session.submit(request.answers)
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            finally:
                record.computing = False
            if not session.stopped:
                try:
                    session.pending_batch()
                except (BudgetExhaustedError, EmptyPoolError):
                    pass
            record.updated_at = time.time()
            store.persist(record)
            return _status(record)

    @app.post("/sessions/{session_id}/finalize")
    def finalize(session_id: str):
        record = store.get(session_id)
        with record.lock:
            session = record.session
            model = session.current_model()
            if model is None:
                raise HTTPException(status_code=409, detail="no trained model yet")
            session.stopped = True
            session.stop_reason = session.stop_reason or "finalized by user"
            record.updated_at = time.time()
            store.persist(record)
            return JSONResponse(content={
                "session_id": record.id,
                "labels_used": session.label_state.n_labeled,
                "model": _model_doc(model),
            })

    @app.get("/sessions/{session_id}/model")
    def get_model(session_id: str):
        record = store.get(session_id)
        with record.lock:
            model = record.session.current_model()
            if model is None:
                raise HTTPException(status_code=409, detail="no trained model yet")
            return JSONResponse(content=_model_doc(model))

    def _model_doc(model) -> dict:
        if hasattr(model, "to_json"):
            return json.loads(model.to_json())
        # co-training pairs export both hypotheses
        return {
            "format": "pair",
            "a": json.loads(model.a.to_json()),
            "b": json.loads(model.b.to_json()),
        }

    def _status(record: SessionRecord) -> StatusResponse:
        session = record.session
        from .activeloop import STOPPING_PHASE, check_stop

        stopping = False
        if len(session.trace) > 0 and not session.stopped:
            stopping = (
                check_stop(session.trace, session.config, session.budget)
                == STOPPING_PHASE
            )
        return StatusResponse(
            session_id=record.id,
            phase=record.phase,
            strategy=session.config.strategy,
            round=session.round_index,
            labels_used=session.label_state.n_labeled,
            budget=session.budget,
            seed_size=session.config.seed_count(session.graph.n_edges),
            pool_size=len(session.label_state.unlabeled_ids),
            stop_reason=session.stop_reason,
            stopping_phase=stopping,
            created_at=record.created_at,
            updated_at=record.updated_at,
            trace=[
                TraceRow(
                    round=r.round_index,
                    labels_used=r.labels_used,
                    clf_query_err=r.clf_query_errors,
                    prop_query_err=r.prop_query_errors,
                    mutual_excl_err=r.mutually_exclusive_errors,
                    pool_accuracy=r.pool_accuracy,
                )
                for r in session.trace
            ],
        )

    def _queries_response(record: SessionRecord, batch) -> QueriesResponse:
        session = record.session
        graph = session.graph
        cards = []
        for i, eid in enumerate(batch.edge_ids):
            edge = graph.edges[eid]
            cards.append(QueryCard(
                edge_id=eid,
                u=edge.u,
                v=edge.v,
                size_u=graph.nodes[edge.u].size,
                size_v=graph.nodes[edge.v].size,
                features=[float(v) for v in edge.x],
                features_standardized=[
                    float(v) for v in record.standardized(edge.x)
                ],
                clf_confidence=batch.clf_confidence[i],
                prop_estimate=batch.prop_estimate[i],
                score=batch.scores[i],
            ))
        return QueriesResponse(
            session_id=record.id,
            round=batch.round_index,
            batch_token=_batch_token(record.id, batch.round_index),
            batch_size=len(cards),
            is_seed_batch=batch.round_index == 0,
            queries=cards,
        )

    return app
