"""HTTP session backend for interactive human sessions.

Exposes the daily loop over JSON: create a session, read the day's chart
slice, forecast, explanations and emphasis flags, submit an order, and
fetch the final summary. The advisor's suggested position is never part
of the day payload; it is recorded server-side for metrics only.

Sessions persist to an append-only per-session event file, so a
restarted service rebuilds any session by replaying its orders through a
fresh deterministic episode.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .constants import EPISODE_DAYS, POSITIONS
from .errors import ConfigError, RejectedOrderError, ValidationError
from .harness import build_corpus, build_predictor, build_series, correlation_per_user, resolve_window
from .seeding import child_seed, rng_for
from .simulation import (
    ArgmaxStrategy, Episode, FlatStrategy, MethodStrategy, RouletteStrategy,
)
from .policy import make_policy
from .user_model import UserModel

DEFAULT_AUTO_WEIGHTS = {"roulette": 2.0, "flat": 1.0, "argmax": 1.0}


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class ServiceConfig:
    master_seed: int
    series: dict
    predictor: dict
    window: dict
    corpus: dict
    conditions: dict                 # id -> {"kind", "policy", "user_model"?}
    auto_weights: dict | None = None
    store_dir: str | None = None
    chart_lookback: int = 30
    episode_len: int = EPISODE_DAYS

    @classmethod
    def from_dict(cls, doc: dict) -> "ServiceConfig":
        try:
            return cls(
                master_seed=int(doc["master_seed"]),
                series=doc["series"],
                predictor=doc["predictor"],
                window=doc["window"],
                corpus=doc.get("corpus", {"generate": {"seed": 0}}),
                conditions=doc["conditions"],
                auto_weights=doc.get("auto_weights"),
                store_dir=doc.get("store_dir"),
                chart_lookback=int(doc.get("chart_lookback", 30)),
                episode_len=int(doc.get("episode_len", EPISODE_DAYS)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid service config: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "ServiceConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SessionRuntime:
    session_id: str
    condition: str
    seed: int
    episode: Episode
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_token: str | None = None
    last_response: dict | None = None


class SessionService:
    """Owns shared simulation resources and the live session table."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.series = build_series(config.series)
        self.predictor = build_predictor(config.predictor, self.series)
        self.window_start, self.length = resolve_window(config.window, self.series, self.predictor)
        self.corpus = build_corpus(config.corpus, self.series, self.predictor,
                                   self.window_start, self.length)
        for cid, spec in config.conditions.items():
            if spec.get("kind") not in ("flat", "argmax", "roulette", "method"):
                raise ConfigError(f"condition {cid!r}: unknown kind {spec.get('kind')!r}")
        self._models: dict[str, UserModel] = {}
        self._sessions: dict[str, SessionRuntime] = {}
        self._table_lock = threading.Lock()
        self.store_dir = Path(config.store_dir) if config.store_dir else None
        if self.store_dir is not None:
            self.store_dir.mkdir(parents=True, exist_ok=True)

    # -- session construction -------------------------------------------------

    def _strategy_for(self, condition: str, seed: int):
        spec = self.config.conditions[condition]
        kind = spec["kind"]
        if kind == "flat":
            return FlatStrategy()
        if kind == "argmax":
            return ArgmaxStrategy()
        if kind == "roulette":
            return RouletteStrategy(seed=child_seed(seed, "pattern"))
        path = spec["user_model"]
        if path not in self._models:
            self._models[path] = UserModel.load(path)
        model = self._models[path]
        return MethodStrategy(model.params_, strategy_id=condition)

    def _policy_for(self, condition: str):
        spec = self.config.conditions[condition]["policy"]
        return make_policy(spec["kind"], series=self.series, path=spec.get("path"))

    def _new_episode(self, condition: str, seed: int) -> Episode:
        return Episode(
            self.series, self.window_start, self.predictor, self.corpus,
            self._strategy_for(condition, seed), self._policy_for(condition),
            strategy_id=condition, episode_len=self.config.episode_len,
        )

    def _pick_auto(self, seed: int) -> str:
        weights = self.config.auto_weights or {
            cid: DEFAULT_AUTO_WEIGHTS.get(cid, 1.0) for cid in self.config.conditions
        }
        ids = [cid for cid in self.config.conditions if weights.get(cid, 0.0) > 0.0]
        if not ids:
            raise ApiError(400, "no_conditions", "no auto-assignable conditions configured")
        w = [weights[cid] for cid in ids]
        total = sum(w)
        rng = rng_for(self.config.master_seed, "auto", seed)
        return ids[int(rng.choice(len(ids), p=[x / total for x in w]))]

    def create_session(self, condition: str = "auto", seed: int | None = None) -> dict:
        session_id = uuid.uuid4().hex
        if seed is None:
            seed = child_seed(self.config.master_seed, "session", session_id)
        if condition == "auto":
            condition = self._pick_auto(seed)
        if condition not in self.config.conditions:
            raise ApiError(400, "unknown_condition",
                           f"condition {condition!r} not configured; "
                           f"choose from {sorted(self.config.conditions)} or 'auto'")
        runtime = SessionRuntime(
            session_id=session_id, condition=condition, seed=seed,
            episode=self._new_episode(condition, seed),
        )
        with self._table_lock:
            self._sessions[session_id] = runtime
        self._append_event(session_id, {"event": "created", "session_id": session_id,
                                        "condition": condition, "seed": seed})
        return {"session_id": session_id, "condition": condition}

    # -- persistence ----------------------------------------------------------

    def _append_event(self, session_id: str, event: dict) -> None:
        if self.store_dir is None:
            return
        with open(self.store_dir / f"{session_id}.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event))
            fh.write("\n")

    def _restore(self, session_id: str) -> SessionRuntime | None:
        if self.store_dir is None:
            return None
        path = self.store_dir / f"{session_id}.jsonl"
        if not path.exists():
            return None
        created = None
        orders = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                if event["event"] == "created":
                    created = event
                elif event["event"] == "order":
                    orders.append(event)
        if created is None:
            return None
        runtime = SessionRuntime(
            session_id=session_id, condition=created["condition"], seed=int(created["seed"]),
            episode=self._new_episode(created["condition"], int(created["seed"])),
        )
        for order in orders:
            runtime.episode.day_view()
            record = runtime.episode.submit(int(order["target"]))
            runtime.last_token = order.get("token")
            # keep the idempotency echo valid across restarts
            runtime.last_response = {
                "accepted": True,
                "episode_day": record.episode_day,
                "total_assets": record.total_assets,
                "completed": runtime.episode.completed,
            }
        with self._table_lock:
            self._sessions[session_id] = runtime
        return runtime

    def get_runtime(self, session_id: str) -> SessionRuntime:
        with self._table_lock:
            runtime = self._sessions.get(session_id)
        if runtime is None:
            runtime = self._restore(session_id)
        if runtime is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return runtime

    # -- endpoints ------------------------------------------------------------

    def day_view(self, session_id: str) -> dict:
        runtime = self.get_runtime(session_id)
        with runtime.lock:
            if runtime.episode.completed:
                raise ApiError(409, "session_completed", "session already completed; fetch the summary")
            view = runtime.episode.day_view()
            lo = max(0, view.day - self.config.chart_lookback + 1)
            bars = [
                {"date_index": b.date_index, "open": b.open, "high": b.high,
                 "low": b.low, "close": b.close}
                for b in runtime.episode.series.bars[lo : view.day + 1]
            ]
            return {
                "session_id": session_id,
                "condition": runtime.condition,
                "day": view.day,
                "episode_day": view.episode_day,
                "days_total": runtime.episode.episode_len,
                "bars": bars,
                "p": {"bull": view.p.p_bull, "neutral": view.p.p_neutral, "bear": view.p.p_bear},
                "texts": {"bull": view.texts.bull, "neutral": view.texts.neutral,
                          "bear": view.texts.bear},
                "emphasis": {"bull": view.pattern.bull, "neutral": view.pattern.neutral,
                             "bear": view.pattern.bear},
                "portfolio": {
                    "cash": view.portfolio.cash,
                    "position": view.portfolio.position,
                    "price": view.close,
                    "total_assets": view.portfolio.value_at(view.close),
                    "delta_pct": view.delta_pct,
                },
                "valid_targets": view.valid_targets,
            }

    def submit_order(self, session_id: str, target_position: int, token: str | None = None) -> dict:
        runtime = self.get_runtime(session_id)
        with runtime.lock:
            if token is not None and token == runtime.last_token and runtime.last_response is not None:
                return runtime.last_response
            if runtime.episode.completed:
                raise ApiError(409, "session_completed", "session already completed")
            if target_position not in POSITIONS:
                raise ApiError(422, "invalid_order",
                               f"target_position must be one of {list(POSITIONS)}")
            try:
                record = runtime.episode.submit(int(target_position))
            except RejectedOrderError as exc:
                raise ApiError(409, "order_rejected", str(exc)) from None
            self._append_event(session_id, {"event": "order", "day": record.episode_day,
                                            "target": record.d_u, "token": token})
            response = {
                "accepted": True,
                "episode_day": record.episode_day,
                "total_assets": record.total_assets,
                "completed": runtime.episode.completed,
            }
            runtime.last_token = token
            runtime.last_response = response
            return response

    def summary(self, session_id: str) -> dict:
        runtime = self.get_runtime(session_id)
        with runtime.lock:
            if not runtime.episode.completed:
                raise ApiError(409, "session_active",
                               f"session still active at day {runtime.episode.day}")
            records = runtime.episode.records
            return {
                "session_id": session_id,
                "condition": runtime.condition,
                "final_assets": runtime.episode.final_assets,
                "days": len(records),
                "correlation": correlation_per_user(records),
                "trace": [
                    {"day": r.day, "episode_day": r.episode_day, "d_u": r.d_u,
                     "delta_pct": r.delta_pct, "total_assets": r.total_assets,
                     "pattern": list(r.pattern.as_tuple())}
                    for r in records
                ],
            }

    def log_jsonl(self, session_id: str) -> str:
        runtime = self.get_runtime(session_id)
        with runtime.lock:
            if not runtime.episode.completed:
                raise ApiError(409, "session_active", "session still active")
            return "".join(json.dumps(r.to_json()) + "\n" for r in runtime.episode.records)


class CreateSessionBody(BaseModel):
    condition: str = "auto"
    seed: int | None = None


class OrderBody(BaseModel):
    target_position: int
    token: str | None = None


def create_app(config: ServiceConfig) -> FastAPI:
    service = SessionService(config)
    app = FastAPI(title="nudgelab session service")
    app.state.service = service
    # the browser client is served from its own origin during development
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(ValidationError)
    async def _validation_error(_request: Request, exc: ValidationError):
        return JSONResponse(status_code=422, content={"code": "invalid_input", "message": str(exc)})

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        return service.create_session(condition=body.condition, seed=body.seed)

    @app.get("/sessions/{session_id}/day")
    def get_day(session_id: str):
        return service.day_view(session_id)

    @app.post("/sessions/{session_id}/order")
    def post_order(session_id: str, body: OrderBody):
        return service.submit_order(session_id, body.target_position, body.token)

    @app.get("/sessions/{session_id}/summary")
    def get_summary(session_id: str):
        return service.summary(session_id)

    @app.get("/sessions/{session_id}/log")
    def get_log(session_id: str):
        return PlainTextResponse(service.log_jsonl(session_id))

    return app
