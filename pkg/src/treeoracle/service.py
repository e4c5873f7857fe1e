"""HTTP surface: train, query, what-if, and trace endpoints backed by an
in-memory session store, consumed by the browser explorer. Stored transcripts
are immutable; what-if probes accumulate in a provenance-stamped side log.
"""

from __future__ import annotations

import json
import secrets
from collections import OrderedDict
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse

from .agent import (
    DEFAULT_TEMPLATE,
    BackendConfig,
    PromptTemplate,
    ScriptedBackend,
    backend_from_json,
    verbalize_verdict,
)
from .core import EngineError, EventKind, Schema, digest
from .orchestrator import (
    DEFAULT_CONFLICT_RULES,
    POLICY_PRESETS,
    TREE_ONLY_POLICY,
    Budget,
    ConflictPolicy,
    DispatchPolicy,
    DispatchRule,
    EpisodeConfig,
    EpisodeTranscript,
    RuleBasedPolicy,
    export_trace,
)
from .perception import record_from_json_object
from .tools import make_builtin_registry
from .tree import (
    Dataset,
    Model,
    SymbolicVerdict,
    TrainParams,
    deserialize_model,
    serialize_model,
    train_cart,
    train_forest,
    training_accuracy,
    what_if,
)


@dataclass(frozen=True)
class ServiceConfig:
    episode_capacity: int = 256
    model_capacity: int = 64
    retention_floor: int = 16  # the newest N episodes are never evicted
    max_body_bytes: int = 4_000_000
    api_key: str | None = None
    cors_origins: tuple[str, ...] = ("*",)
    backend: BackendConfig = field(
        default_factory=lambda: ScriptedBackend(
            rules=(), default="ANSWER: unknown | RATIONALE: no backend configured"))
    snapshot_path: str | None = None

    @staticmethod
    def from_json(obj: Mapping) -> "ServiceConfig":
        backend = (backend_from_json(obj["backend"]) if "backend" in obj
                   else ServiceConfig().backend)
        return ServiceConfig(
            episode_capacity=obj.get("episode_capacity", 256),
            model_capacity=obj.get("model_capacity", 64),
            retention_floor=obj.get("retention_floor", 16),
            max_body_bytes=obj.get("max_body_bytes", 4_000_000),
            api_key=obj.get("api_key"),
            cors_origins=tuple(obj.get("cors_origins", ("*",))),
            backend=backend,
            snapshot_path=obj.get("snapshot_path"))


@dataclass
class StoredEpisode:
    transcript: EpisodeTranscript
    model_id: str
    schema: Schema
    transcript_digest: str
    whatif_log: list[dict] = field(default_factory=list)
    seq: int = 0


class SessionStore:
    """LRU maps for episodes and models. Episode ids are unguessable random
    128-bit tokens; eviction spares everything younger than the retention
    floor (ages are insertion-sequence based, so behavior is deterministic)."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.episodes: OrderedDict[str, StoredEpisode] = OrderedDict()
        self.models: OrderedDict[str, bytes] = OrderedDict()
        self._seq = 0

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def put_model(self, blob: bytes) -> str:
        model_id = secrets.token_hex(16)
        self.models[model_id] = blob
        self.models.move_to_end(model_id)
        while len(self.models) > self.config.model_capacity:
            self.models.popitem(last=False)
        return model_id

    def get_model(self, model_id: str) -> bytes | None:
        blob = self.models.get(model_id)
        if blob is not None:
            self.models.move_to_end(model_id)
        return blob

    def put_episode(self, episode: StoredEpisode) -> str:
        episode_id = secrets.token_hex(16)
        episode.seq = self._next_seq()
        self.episodes[episode_id] = episode
        self._evict()
        return episode_id

    def get_episode(self, episode_id: str) -> StoredEpisode | None:
        entry = self.episodes.get(episode_id)
        if entry is not None:
            self.episodes.move_to_end(episode_id)
        return entry

    def _evict(self) -> None:
        while len(self.episodes) > self.config.episode_capacity:
            for key in self.episodes:  # LRU order
                age = self._seq - self.episodes[key].seq
                if age >= self.config.retention_floor:
                    del self.episodes[key]
                    break
            else:
                return  # everything is inside the retention floor; over-retain

    def snapshot(self, path: str) -> None:
        doc = {
            "models": {mid: blob.decode("utf-8") for mid, blob in self.models.items()},
            "episodes": {
                eid: {"transcript": entry.transcript.to_json(),
                      "model_id": entry.model_id,
                      "schema": entry.schema.to_json(),
                      "whatif_log": entry.whatif_log}
                for eid, entry in self.episodes.items()},
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


class _HTTPError(Exception):
    def __init__(self, status: int, kind: str, message: str):
        super().__init__(message)
        self.status = status
        self.kind = kind
        self.message = message


def _error_response(status: int, kind: str, message: str,
                    extra: Mapping[str, Any] | None = None) -> JSONResponse:
    body: dict[str, Any] = {"error": {"kind": kind, "message": message}}
    if extra:
        body.update(extra)
    return JSONResponse(body, status_code=status)


# ---------------------------------------------------------------------------
# Episode config assembly (shared with the CLI so both surfaces reproduce
# byte-identical transcripts from the same inputs)


def build_episode_config(model: Model, schema: Schema,
                         overrides: Mapping[str, Any] | None,
                         default_backend: BackendConfig) -> EpisodeConfig:
    overrides = overrides or {}
    backend = (backend_from_json(overrides["backend"]) if "backend" in overrides
               else default_backend)
    policy: DispatchPolicy = TREE_ONLY_POLICY
    if "policy" in overrides:
        policy = _policy_from_json(overrides["policy"])
    budget = (Budget.from_json(overrides["budget"]) if "budget" in overrides
              else Budget())
    rules = (ConflictPolicy.from_json(overrides["conflict_rules"])
             if "conflict_rules" in overrides else DEFAULT_CONFLICT_RULES)
    templates = {"default": (PromptTemplate.from_json(overrides["template"])
                             if "template" in overrides else DEFAULT_TEMPLATE)}
    return EpisodeConfig(schema=schema, backend=backend, model=model,
                         policy=policy, conflict_rules=rules, budget=budget,
                         registry=make_builtin_registry(),
                         templates=templates,
                         seed=int(overrides.get("seed", 0)))


def _policy_from_json(obj: Any) -> DispatchPolicy:
    if isinstance(obj, str):
        if obj not in POLICY_PRESETS:
            raise EngineError(f"unknown policy preset {obj!r}")
        return POLICY_PRESETS[obj]
    if isinstance(obj, Mapping) and obj.get("kind") == "rule_based":
        rules = tuple(DispatchRule(r["when"], r["do"]) for r in obj["rules"])
        return RuleBasedPolicy(rules, obj.get("template_id", "default"))
    raise EngineError("policy must be a preset name or a rule_based object")


# ---------------------------------------------------------------------------
# App


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    store = SessionStore(config)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        if config.snapshot_path:
            store.snapshot(config.snapshot_path)

    app = FastAPI(title="treeoracle", docs_url=None, redoc_url=None,
                  lifespan=lifespan)
    app.state.store = store
    app.state.config = config

    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware, allow_origins=list(config.cors_origins),
            allow_methods=["*"], allow_headers=["*"])

    async def read_body(request: Request) -> dict:
        raw = await request.body()
        if len(raw) > config.max_body_bytes:
            raise _HTTPError(413, "PayloadTooLarge",
                             f"body exceeds {config.max_body_bytes} bytes")
        if config.api_key and request.headers.get("x-api-key") != config.api_key:
            raise _HTTPError(401, "Unauthorized", "missing or wrong API key")
        try:
            doc = json.loads(raw.decode("utf-8"))
        except Exception as err:  # noqa: BLE001
            raise _HTTPError(400, "MalformedBody", f"body is not valid JSON: {err}")
        if not isinstance(doc, dict):
            raise _HTTPError(400, "MalformedBody", "body must be a JSON object")
        return doc

    @app.exception_handler(_HTTPError)
    async def handle_http_error(_request: Request, err: _HTTPError) -> JSONResponse:
        return _error_response(err.status, err.kind, err.message)

    @app.get("/v1/healthz")
    async def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/v1/models")
    async def list_models(episode_id: str | None = None,
                          include: str | None = None) -> Response:
        """Model roster; filter to one episode's model via ?episode_id= and
        attach the full model document via ?include=doc (the explorer's tree
        view needs it)."""
        wanted: str | None = None
        if episode_id is not None:
            entry = store.get_episode(episode_id)
            if entry is None:
                return _error_response(404, "UnknownEpisode",
                                       f"no episode with id {episode_id!r}")
            wanted = entry.model_id
        out = []
        for mid, blob in store.models.items():
            if wanted is not None and mid != wanted:
                continue
            doc = json.loads(blob)
            item = {"model_id": mid, "kind": doc["kind"]}
            if include == "doc":
                item["doc"] = doc
            out.append(item)
        return JSONResponse({"models": out})

    @app.post("/v1/train")
    async def train(request: Request) -> JSONResponse:
        body = await read_body(request)
        try:
            schema = Schema.from_json(body["schema"])
            rows_doc = body.get("rows")
            if rows_doc is None:
                raise EngineError("m >= 1: dataset must contain at least one row")
            params = TrainParams.from_json({
                "criterion": "gini", "max_depth": 8, "min_leaf": 1,
                "min_split_gain": 0.0, "rng_seed": 0, **body.get("params", {})})
            dataset = _dataset_from_rows(schema, rows_doc)
            forest_cfg = body.get("forest")
            if forest_cfg:
                model: Model = train_forest(
                    dataset, forest_cfg.get("n_trees", 10), params,
                    forest_cfg.get("feature_subsample_count"),
                    forest_cfg.get("master_seed", 0),
                    forest_cfg.get("bootstrap", True))
                depth = max(t.depth() for t in model.trees)
                leaves = sum(t.n_leaves for t in model.trees)
            else:
                model = train_cart(dataset, params)
                depth = model.depth()
                leaves = model.n_leaves
            accuracy = training_accuracy(model, dataset)
        except (KeyError, TypeError, ValueError) as err:
            return _error_response(400, "MalformedBody", f"bad train request: {err}")
        except EngineError as err:
            return _error_response(400, type(err).__name__, str(err))
        model_id = store.put_model(serialize_model(model))
        return JSONResponse({
            "model_id": model_id,
            "summary": {"depth": depth, "leaf_count": leaves,
                        "training_accuracy": accuracy,
                        "m": dataset.m, "k": dataset.k}})

    @app.post("/v1/query")
    async def query(request: Request) -> JSONResponse:
        body = await read_body(request)
        model_id = body.get("model_id", "")
        blob = store.get_model(model_id)
        if blob is None:
            return _error_response(404, "UnknownModel",
                                   f"no model with id {model_id!r}")
        model = deserialize_model(blob)
        record_doc = body.get("record")
        if not isinstance(record_doc, Mapping):
            return _error_response(400, "MalformedBody", "record must be an object")
        record = record_from_json_object(record_doc)
        try:
            episode_config = build_episode_config(model, model.schema,
                                                  body.get("overrides"),
                                                  config.backend)
        except EngineError as err:
            return _error_response(400, type(err).__name__, str(err))
        try:
            from .orchestrator import run_episode
            transcript = run_episode(record, episode_config)
        except EngineError as err:
            return _error_response(422, type(err).__name__, str(err))

        entry = StoredEpisode(
            transcript=transcript, model_id=model_id, schema=model.schema,
            transcript_digest=digest(export_trace(transcript, "json")))
        episode_id = store.put_episode(entry)
        verdict_event = transcript.belief.latest(EventKind.TREE_VERDICT)
        verdict = (SymbolicVerdict.from_json(verdict_event.payload)
                   if verdict_event else None)
        payload = {
            "episode_id": episode_id,
            "answer": transcript.final_answer,
            "terminal_status": transcript.terminal_status,
            "verdict": verdict.to_json() if verdict else None,
            "verbalization": (verbalize_verdict(verdict, model.schema)
                              if verdict else None),
            "transcript": {
                "counters": dict(transcript.counters),
                "event_count": len(transcript.belief.events),
                "seed": transcript.seed,
            },
        }
        if transcript.terminal_status == "error" and _backend_caused(transcript):
            payload["error"] = {"kind": "BackendFailure",
                                "message": "remote backend failed; partial "
                                           "transcript persisted"}
            return JSONResponse(payload, status_code=502)
        return JSONResponse(payload)

    @app.post("/v1/whatif")
    async def whatif(request: Request) -> JSONResponse:
        body = await read_body(request)
        episode_id = body.get("episode_id", "")
        entry = store.get_episode(episode_id)
        if entry is None:
            return _error_response(404, "UnknownEpisode",
                                   f"no episode with id {episode_id!r}")
        if entry.transcript.belief.latest(EventKind.TREE_VERDICT) is None:
            return _error_response(422, "NoTreeVerdict",
                                   "episode holds no tree verdict to probe")
        modifications = body.get("modifications")
        if not isinstance(modifications, Mapping):
            return _error_response(422, "MalformedBody",
                                   "modifications must be an object")
        blob = store.get_model(entry.model_id)
        if blob is None:
            return _error_response(404, "UnknownModel",
                                   "the episode's model was evicted")
        model = deserialize_model(blob)
        try:
            result = what_if(model, entry.transcript.belief.input, modifications)
        except EngineError as err:
            return _error_response(422, type(err).__name__, str(err))
        after_verbal = verbalize_verdict(result.after, entry.schema)
        log_entry = {
            "index": len(entry.whatif_log),
            "modifications": dict(modifications),
            "result_digest": digest(json.dumps(result.to_json(),
                                               sort_keys=True).encode()),
            "timestamp": len(entry.whatif_log) + 1,
        }
        entry.whatif_log.append(log_entry)
        return JSONResponse({
            "episode_id": episode_id,
            "result": result.to_json(),
            "verbalization": after_verbal,
            "whatif_log_length": len(entry.whatif_log),
            "transcript_digest": entry.transcript_digest,
        })

    @app.get("/v1/trace/{episode_id}")
    async def trace(episode_id: str, format: str = "json") -> Response:
        entry = store.get_episode(episode_id)
        if entry is None:
            return _error_response(404, "UnknownEpisode",
                                   f"no episode with id {episode_id!r}")
        if format not in ("json", "text"):
            return _error_response(400, "UnknownFormat",
                                   f"format must be json or text, got {format!r}")
        data = export_trace(entry.transcript, format)
        if format == "json":
            return Response(content=data, media_type="application/json")
        return PlainTextResponse(content=data.decode("utf-8"))

    return app


def _dataset_from_rows(schema: Schema, rows_doc: Any) -> Dataset:
    from .perception import normalize
    if not isinstance(rows_doc, list) or not rows_doc:
        raise EngineError("m >= 1: dataset must contain at least one row")
    label_name = schema.label.name
    rows = []
    labels = []
    for obj in rows_doc:
        if not isinstance(obj, Mapping) or label_name not in obj:
            raise EngineError(f"every row needs the label field {label_name!r}")
        values = {k: v for k, v in obj.items() if k != label_name}
        record = record_from_json_object(values)
        rows.append(normalize(record, schema))
        labels.append(schema.validate_label(str(obj[label_name])))
    return Dataset(schema, tuple(rows), tuple(labels))


def _backend_caused(transcript: EpisodeTranscript) -> bool:
    if transcript.error_index is None:
        return False
    event = transcript.belief.events[transcript.error_index]
    reason = event.payload.get("parse_reason") or ""
    return event.kind is EventKind.NEURAL_RESPONSE and reason.startswith("backend:")
