"""HTTP service exposing cycle runs to the review UI.

Response bodies are the persisted representations themselves (run
snapshots, iteration records, stats documents); the UI and the logs can
never disagree. Clients poll run snapshots with ETag support; per-run
mutations are serialized through one in-process lock per run on top of
the store's file lock, so CLI and API writers never interleave.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import defaultdict
from pathlib import Path

from fastapi import Body, FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from .backends import build_backend
from .cohort import Cohort, load_cohort
from .engine import (
    CycleRun,
    HumanDecision,
    RunStore,
    _canonical,
    _sha256,
    apply_human_decision,
    record_to_dict,
    run_to_dict,
    start_run,
    step,
)
from .errors import (
    BackendError,
    ConfigError,
    PhenocycleError,
    RunLocked,
    WrongState,
)
from .runspec import RunSpec, parse_run_spec

log = logging.getLogger(__name__)

STATUS_BY_CODE = {
    "not_found": 404,
    "wrong_state": 409,
    "validation": 422,
    "backend_unavailable": 502,
    "internal": 500,
}
CODE_BY_STATUS = {status: code for code, status in STATUS_BY_CODE.items()}


class ApiError(Exception):
    def __init__(self, code: str, message: str):
        assert code in STATUS_BY_CODE
        self.code = code
        self.message = message
        super().__init__(message)


def _error_response(code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=STATUS_BY_CODE[code],
        content={"code": code, "message": message},
    )


def _classify(exc: Exception) -> ApiError:
    if isinstance(exc, ApiError):
        return exc
    if isinstance(exc, FileNotFoundError):
        return ApiError("not_found", str(exc))
    if isinstance(exc, WrongState):
        return ApiError("wrong_state", str(exc))
    if isinstance(exc, RunLocked):
        return ApiError("wrong_state", str(exc))
    if isinstance(exc, BackendError):
        return ApiError("backend_unavailable", str(exc))
    if isinstance(exc, PhenocycleError):
        return ApiError("validation", str(exc))
    return ApiError("internal", f"{type(exc).__name__}: {exc}")


def snapshot_etag(snapshot: dict) -> str:
    return f'"{_sha256(_canonical(snapshot))[:32]}"'


class RunManager:
    """Owns the run registry: persisted state, cohorts, drive threads."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.store = RunStore(self.data_dir)
        self.runs: dict[str, CycleRun] = {}
        self._cohorts: dict[str, Cohort] = {}
        # one backend instance per run lifetime: scripted backends are
        # positional, so rebuilding one mid-run would replay responses
        self._backends: dict[str, object] = {}
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._registry_lock = threading.Lock()
        self._threads: dict[str, threading.Thread] = {}
        for run_id in self.store.list_runs():
            try:
                self.runs[run_id] = self.store.load(run_id)
                self._locks[run_id]          # materialize while single-threaded
            except PhenocycleError as exc:
                log.warning("skipping unloadable run %s: %s", run_id, exc)

    # ---- cohort handling ----

    def meta_path(self, run_id: str) -> Path:
        return self.data_dir / f"{run_id}.meta.json"

    def _cohort_at(self, path: Path) -> Cohort:
        key = str(path)
        if key not in self._cohorts:
            fmt = "csv" if path.suffix == ".csv" else "jsonl"
            self._cohorts[key] = load_cohort(path, format=fmt)
        return self._cohorts[key]

    def cohort_for(self, run_id: str) -> Cohort:
        meta = json.loads(self.meta_path(run_id).read_text(encoding="utf-8"))
        return self._cohort_at(Path(meta["cohort"]))

    def default_cohort(self) -> Cohort:
        """The service's cohort: data_dir/cohort.jsonl if present, else
        the one used by the most recently created run."""
        conventional = self.data_dir / "cohort.jsonl"
        if conventional.exists():
            return self._cohort_at(conventional)
        metas = sorted(
            self.data_dir.glob("*.meta.json"), key=lambda p: p.stat().st_mtime
        )
        if not metas:
            raise ApiError("not_found", "no cohort available yet")
        meta = json.loads(metas[-1].read_text(encoding="utf-8"))
        return self._cohort_at(Path(meta["cohort"]))

    # ---- lifecycle ----

    def get(self, run_id: str) -> CycleRun:
        try:
            return self.runs[run_id]
        except KeyError:
            raise ApiError("not_found", f"no run {run_id!r}") from None

    def create(self, spec: RunSpec) -> CycleRun:
        try:
            cohort = self._cohort_at(spec.cohort_path)
        except FileNotFoundError as exc:
            raise ApiError("validation", f"cohort file not found: {exc}") from exc
        run = start_run(cohort, spec.pool, spec.config, run_id=spec.run_id)
        with self._registry_lock:
            if run.run_id in self.runs:
                raise ApiError("validation", f"run {run.run_id!r} already exists")
            self._locks[run.run_id]          # materialize under the registry lock
            self.store.create(run)
            self.meta_path(run.run_id).write_text(
                json.dumps({"cohort": str(spec.cohort_path)}) + "\n",
                encoding="utf-8",
            )
            self.runs[run.run_id] = run
        self._spawn_drive(run.run_id)
        return run

    def _spawn_drive(self, run_id: str) -> None:
        thread = threading.Thread(
            target=self._drive, args=(run_id,), daemon=True,
            name=f"drive-{run_id}",
        )
        self._threads[run_id] = thread
        thread.start()

    def _backend_for(self, run_id: str, cohort: Cohort):
        if run_id not in self._backends:
            run = self.runs[run_id]
            self._backends[run_id] = build_backend(run.config.backend, cohort=cohort)
        return self._backends[run_id]

    def _drive(self, run_id: str) -> None:
        try:
            cohort = self.cohort_for(run_id)
            with self._locks[run_id]:
                run = self.runs[run_id]
                backend = self._backend_for(run_id, cohort)
                while run.status == "running":
                    run = step(run, cohort, backend)
                    self.store.append_record(run_id, run.iterations[-1])
                    if run.final_stats is not None:
                        self.store.write_stats(run_id, run.final_stats)
                    self.runs[run_id] = run
        except Exception:
            log.exception("drive thread for %s failed", run_id)

    def decide(self, run_id: str, decision: HumanDecision) -> CycleRun:
        run = self.get(run_id)
        if run.status != "awaiting_human":     # fast path: never blocks on a drive
            raise WrongState(f"run {run_id} is {run.status}, not awaiting_human")
        cohort = self.cohort_for(run_id)
        with self._locks[run_id]:
            run = self.runs[run_id]
            run = apply_human_decision(run, decision, cohort=cohort)
            self.store.append_record(run_id, run.iterations[-1])
            if run.final_stats is not None:
                self.store.write_stats(run_id, run.final_stats)
            self.runs[run_id] = run
        if run.status == "running":
            self._spawn_drive(run_id)
        return run

    def join_idle(self, timeout: float = 10.0) -> None:
        """Wait for drive threads to settle; used by tests."""
        for thread in list(self._threads.values()):
            thread.join(timeout)


def cohort_summary(cohort: Cohort) -> dict:
    dates = [
        e.timestamp
        for p in cohort
        for g in p.groups.values()
        for e in g.events
    ]
    return {
        "n_participants": len(cohort.participants),
        "n_events": len(dates),
        "date_range": (
            [min(dates).isoformat(), max(dates).isoformat()] if dates else None
        ),
        "schema": {
            name: bool(flag) for name, flag in sorted(cohort.schema().items())
        },
    }


def create_app(
    data_dir: str | Path, ui_dir: str | Path | None = None
) -> FastAPI:
    manager = RunManager(Path(data_dir))
    app = FastAPI(title="phenocycle review service")
    app.state.manager = manager

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return _error_response(exc.code, exc.message)

    @app.exception_handler(PhenocycleError)
    async def _domain_error(request: Request, exc: PhenocycleError):
        err = _classify(exc)
        return _error_response(err.code, err.message)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return _error_response("validation", str(exc.errors()[:3]))

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException):
        code = CODE_BY_STATUS.get(exc.status_code, "internal")
        return _error_response(code, str(exc.detail))

    @app.exception_handler(Exception)
    async def _unhandled(request: Request, exc: Exception):
        log.exception("unhandled error on %s", request.url.path)
        return _error_response("internal", f"{type(exc).__name__}: {exc}")

    @app.post("/api/runs", status_code=201)
    def create_run(payload: dict = Body(...)) -> dict:
        spec = parse_run_spec(payload, base_dir=manager.data_dir)
        run = manager.create(spec)
        return {"run_id": run.run_id}

    @app.get("/api/runs")
    def list_runs() -> list[dict]:
        return [
            run_to_dict(manager.runs[run_id])
            for run_id in sorted(manager.runs)
        ]

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str, request: Request, response: Response):
        snapshot = run_to_dict(manager.get(run_id))
        etag = snapshot_etag(snapshot)
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers={"ETag": etag})
        response.headers["ETag"] = etag
        return snapshot

    @app.get("/api/runs/{run_id}/iterations/{n}")
    def get_iteration(run_id: str, n: int) -> dict:
        run = manager.get(run_id)
        if not 0 <= n < len(run.iterations):
            raise ApiError(
                "not_found", f"run {run_id} has no iteration {n}"
            )
        return record_to_dict(run.iterations[n])

    @app.post("/api/runs/{run_id}/decision")
    def post_decision(
        run_id: str,
        request: Request,
        response: Response,
        payload: dict = Body(...),
    ):
        expected = request.headers.get("if-match")
        if expected is not None:
            current = snapshot_etag(run_to_dict(manager.get(run_id)))
            if expected != current:
                raise ApiError(
                    "wrong_state",
                    "snapshot is stale: the run changed since it was read",
                )
        decision = HumanDecision.from_dict(payload)
        run = manager.decide(run_id, decision)
        snapshot = run_to_dict(run)
        response.headers["ETag"] = snapshot_etag(snapshot)
        return snapshot

    @app.get("/api/runs/{run_id}/stats")
    def get_stats(run_id: str) -> dict:
        run = manager.get(run_id)
        if run.final_stats is None:
            raise ApiError("not_found", f"run {run_id} has no stats yet")
        return run.final_stats

    @app.get("/api/cohort/summary")
    def get_cohort_summary() -> dict:
        return cohort_summary(manager.default_cohort())

    if ui_dir is not None:
        from starlette.staticfiles import StaticFiles

        ui_path = Path(ui_dir)
        if not (ui_path / "index.html").is_file():
            raise ConfigError(f"no index.html under {ui_path}")
        # mounted last so /api/* keeps precedence
        app.mount("/", StaticFiles(directory=ui_path, html=True), name="ui")

    return app
