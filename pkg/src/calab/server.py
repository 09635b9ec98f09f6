"""HTTP session service: a human drives the PAL loop as the oracle.

Each session owns one ActiveLearner. The pending query carries a one-shot
token; submitting a label with a stale token is rejected with 409, which
makes double submits safe. Every mutation is appended to a JSONL journal;
on restart the journal replays against the deterministic learner, so the
pending query after a crash equals the one before it.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .data import Dataset, load_dataset, stratified_kfold, zscore_fit_apply
from .learner import ActiveLearner, LearnerConfig
from .oracle import CostModel

API_PREFIX = "/api/v1"
CONFIRM_THRESHOLD = 0.9


class CreateSessionBody(BaseModel):
    dataset: str
    config: dict = {}
    fold: int = 0
    k: int = 5
    fold_seed: int = 0
    annotator: str = "human"
    cost: dict = {}


class LabelBody(BaseModel):
    token: str
    label: int | None = None
    conclusion: int | None = None
    confidence: float = 1.0
    annotator: str | None = None


@dataclass
class Session:
    id: str
    dataset_id: str
    learner: ActiveLearner
    cost: CostModel
    annotator: str
    create_payload: dict
    journal_path: Path | None = None
    token_counter: int = 0
    pending: dict | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def next_token(self) -> str:
        self.token_counter += 1
        return f"q{self.token_counter}"

    def journal(self, event: dict) -> None:
        if self.journal_path is None:
            return
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    # -- pending query management -----------------------------------------

    def refresh_pending(self) -> None:
        if self.learner.status == "stopped":
            self.pending = None
            return
        queries = self.learner.pending_queries()
        if not queries:
            self.pending = None
            return
        q = queries[0]
        token = self.next_token()
        if q["type"] == "rule":
            rule = q["rule"]
            self.pending = {
                "type": "rule",
                "token": token,
                "component": rule.component,
                "premise": rule.premise_text(),
                "text": rule.text(self.learner.train.class_names),
            }
            return
        rid = q["row_id"]
        learner = self.learner
        feats = {}
        row = learner.train.rows[rid]
        for k, col in enumerate(learner.train.schema.feature_columns):
            if col.kind == "continuous":
                feats[col.name] = float(row[k])
            else:
                feats[col.name] = col.categories[int(row[k])]
        posterior = None
        scores = None
        if learner.model is not None:
            if hasattr(learner.model, "posterior"):
                cat = None if learner._train_cat is None else learner._train_cat[rid]
                posterior = [float(v) for v in learner.model.posterior(
                    learner.train.continuous[rid], cat
                )]
            elif learner.cmm is not None:
                cat = None if learner._train_cat is None else learner._train_cat[rid]
                posterior = [float(v) for v in learner.cmm.posterior(
                    learner.train.continuous[rid], cat
                )]
            pool_ids = learner.pool.sorted_unlabeled()
            where = np.flatnonzero(pool_ids == rid)
            if where.size and learner.cmm is not None:
                all_scores = learner.criterion_scores(pool_ids)
                scores = {k: float(v[where[0]]) for k, v in all_scores.items()}
        remaining_initial = 0
        if self.learner.cycle == 0:
            remaining_initial = len(
                [r for r in learner._pending_samples if r not in learner._received]
            )
        self.pending = {
            "type": "sample",
            "token": token,
            "row_id": int(rid),
            "features": feats,
            "posterior": posterior,
            "scores": scores,
            "margin_norm": q["margin_norm"],
            "remaining_initial": remaining_initial,
        }

    def query_payload(self) -> dict:
        if self.learner.status == "stopped" or self.pending is None:
            return {"type": "none", "stop_reason": self.learner.stop_reason}
        return self.pending

    def cycle_summary(self) -> dict:
        last = self.learner.cycle_entries[-1] if self.learner.cycle_entries else None
        return {
            "cycle": None if last is None else last["cycle"],
            "n_labeled": None if last is None else last["n_labeled"],
            "test_accuracy": None if last is None else last["test_accuracy"],
            "status": self.learner.status,
            "stop_reason": self.learner.stop_reason,
        }

    def apply_label(self, body: LabelBody) -> dict:
        """Validate against the pending query, mutate the learner, journal."""
        if self.learner.status == "stopped":
            raise HTTPException(409, "session is stopped")
        if self.pending is None or body.token != self.pending["token"]:
            raise HTTPException(409, "stale or unknown query token")
        if not 0.0 <= body.confidence <= 1.0:
            raise HTTPException(422, "confidence must lie in [0, 1]")
        annotator = body.annotator or self.annotator
        learner = self.learner
        if self.pending["type"] == "sample":
            if body.label is None:
                raise HTTPException(422, "sample query needs a 'label'")
            if not 0 <= body.label < learner.n_classes:
                raise HTTPException(422, f"label must lie in [0, {learner.n_classes})")
            rid = self.pending["row_id"]
            cost = self.cost.cost(body.label, self.pending["margin_norm"], "sample")
            learner.ledger.charge(learner.cycle, annotator, "sample", cost)
            learner.provide_sample_label(rid, body.label)
        else:
            if body.conclusion is None:
                raise HTTPException(422, "rule query needs a 'conclusion'")
            if not 0 <= body.conclusion < learner.n_classes:
                raise HTTPException(422, f"conclusion must lie in [0, {learner.n_classes})")
            component = self.pending["component"]
            cost = self.cost.cost(body.conclusion, 1.0, "rule")
            learner.ledger.charge(learner.cycle, annotator, "rule", cost)
            rule = next(r for r in learner.rules if r.component == component)
            learner.note_rule_answered(rule, body.conclusion, body.confidence, annotator)
            learner.provide_rule_conclusion(component, body.conclusion, max(body.confidence, 1e-6))
        self.journal(
            {
                "event": "label",
                "token": body.token,
                "type": self.pending["type"],
                "label": body.label,
                "conclusion": body.conclusion,
                "confidence": body.confidence,
                "annotator": annotator,
            }
        )
        self.refresh_pending()
        return {"accepted": True, "summary": self.cycle_summary(), "query": self.query_payload()}

    def status_payload(self) -> dict:
        learner = self.learner
        prompts = []
        for rule in learner.rules:
            if rule.conclusion is not None and rule.confidence > CONFIRM_THRESHOLD:
                prompts.append(
                    f"Can you confirm this rule: {rule.text(learner.train.class_names)!s} ?"
                )
        return {
            "session_id": self.id,
            "dataset": self.dataset_id,
            "status": learner.status,
            "stop_reason": learner.stop_reason,
            "curve": [
                {
                    "cycle": e["cycle"],
                    "n_labeled": e["n_labeled"],
                    "test_accuracy": e["test_accuracy"],
                    "cost_spent": e["cost_spent"],
                }
                for e in learner.cycle_entries
            ],
            "weights_history": [
                {"cycle": e["cycle"], "weights": e["weights"]} for e in learner.cycle_entries
            ],
            "ledger": learner.ledger.to_json(),
            "rules": [r.to_json() for r in learner.rules],
            "prompts": prompts,
            "class_names": list(learner.train.class_names),
        }


class SessionManager:
    def __init__(self, data_dir: str | Path, journal_dir: str | Path | None = None):
        self.data_dir = Path(data_dir)
        self.journal_dir = Path(journal_dir) if journal_dir else None
        if self.journal_dir:
            self.journal_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    # -- datasets -----------------------------------------------------------

    def list_datasets(self) -> list[dict]:
        out = []
        if not self.data_dir.exists():
            return out
        for csv_path in sorted(self.data_dir.glob("*.csv")):
            schema_path = csv_path.with_suffix("").parent / f"{csv_path.stem}.schema.json"
            if schema_path.exists():
                out.append({"id": csv_path.stem})
        return out

    def load_fold(self, dataset_id: str, k: int, fold: int, fold_seed: int):
        csv_path = self.data_dir / f"{dataset_id}.csv"
        schema_path = self.data_dir / f"{dataset_id}.schema.json"
        if not csv_path.exists() or not schema_path.exists():
            raise HTTPException(400, f"unknown dataset {dataset_id!r}")
        dataset = load_dataset(csv_path, schema_path)
        split = stratified_kfold(dataset, k, seed=fold_seed)
        train = dataset.subset(split.train_indices(fold))
        test = dataset.subset(split.test_indices(fold))
        (train, test), _ = zscore_fit_apply(train, [test])
        return train, test

    # -- lifecycle ------------------------------------------------------------

    def create(self, body: CreateSessionBody, session_id: str | None = None, journal: bool = True) -> Session:
        cfg_json = dict(body.config)
        if cfg_json.get("budget") is None and cfg_json.get("max_cycles") is None:
            cfg_json["max_cycles"] = 100
        try:
            config = LearnerConfig.from_json(cfg_json)
        except (TypeError, ValueError) as exc:
            raise HTTPException(400, f"invalid config: {exc}") from exc
        train, test = self.load_fold(body.dataset, body.k, body.fold, body.fold_seed)
        if config.q > len(train):
            raise HTTPException(400, "query size exceeds the pool")
        if config.n_init > len(train):
            raise HTTPException(400, "n_init exceeds the pool")
        try:
            learner = ActiveLearner(
                train,
                test,
                config,
                dataset_id=body.dataset,
                method_id=f"{config.model}+{config.strategy}",
                fold=body.fold,
            )
        except ValueError as exc:
            raise HTTPException(400, f"invalid config: {exc}") from exc
        cost = CostModel.from_json(body.cost) if body.cost else CostModel()
        learner.min_query_cost = {"sample": cost.min_cost("sample"), "rule": cost.min_cost("rule")}
        sid = session_id or uuid.uuid4().hex[:12]
        session = Session(
            id=sid,
            dataset_id=body.dataset,
            learner=learner,
            cost=cost,
            annotator=body.annotator,
            create_payload=body.model_dump(),
            journal_path=(self.journal_dir / f"{sid}.jsonl") if (self.journal_dir and journal) else None,
        )
        session.refresh_pending()
        if journal and session.journal_path is not None:
            session.journal({"event": "created", "session": sid, "body": body.model_dump()})
        with self._lock:
            self.sessions[sid] = session
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    # -- journal replay ---------------------------------------------------------

    def replay_all(self) -> int:
        if not self.journal_dir:
            return 0
        n = 0
        for path in sorted(self.journal_dir.glob("*.jsonl")):
            try:
                self._replay_one(path)
                n += 1
            except Exception:
                continue
        return n

    def _replay_one(self, path: Path) -> None:
        events = [
            json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        if not events or events[0].get("event") != "created":
            return
        created = events[0]
        body = CreateSessionBody(**created["body"])
        session = self.create(body, session_id=created["session"], journal=False)
        for event in events[1:]:
            if event.get("event") == "label":
                try:
                    session.apply_label(
                        LabelBody(
                            token=session.pending["token"] if session.pending else "",
                            label=event.get("label"),
                            conclusion=event.get("conclusion"),
                            confidence=event.get("confidence", 1.0),
                            annotator=event.get("annotator"),
                        )
                    )
                except HTTPException:
                    break
            elif event.get("event") == "stop":
                session.learner.stop()
                session.pending = None
        # journaling reattaches only after replay so events are not duplicated
        session.journal_path = path


def create_app(data_dir: str | Path = "data", journal_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="calab labeling sessions", version="1.0")
    manager = SessionManager(data_dir, journal_dir)
    manager.replay_all()
    app.state.manager = manager

    @app.get(f"{API_PREFIX}/datasets")
    def datasets():
        return {"datasets": manager.list_datasets()}

    @app.post(f"{API_PREFIX}/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        session = manager.create(body)
        with session.lock:
            return {
                "session_id": session.id,
                "query": session.query_payload(),
                "class_names": list(session.learner.train.class_names),
                "n_classes": session.learner.n_classes,
            }

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}/query")
    def get_query(session_id: str):
        session = manager.get(session_id)
        with session.lock:
            return session.query_payload()

    @app.post(f"{API_PREFIX}/sessions/{{session_id}}/label")
    def post_label(session_id: str, body: LabelBody):
        session = manager.get(session_id)
        with session.lock:
            return session.apply_label(body)

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}/status")
    def get_status(session_id: str):
        session = manager.get(session_id)
        with session.lock:
            return session.status_payload()

    @app.post(f"{API_PREFIX}/sessions/{{session_id}}/stop")
    def stop_session(session_id: str):
        session = manager.get(session_id)
        with session.lock:
            if session.learner.status == "active":
                session.learner.stop()
                session.pending = None
                session.journal({"event": "stop"})
            return {"status": "stopped", "stop_reason": session.learner.stop_reason}

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}/record", response_class=PlainTextResponse)
    def get_record(session_id: str):
        session = manager.get(session_id)
        with session.lock:
            return "\n".join(session.learner.build_record().to_jsonl_lines()) + "\n"

    return app
