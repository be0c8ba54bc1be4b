"""HTTP service hosting solved policies and live trial sessions.

Read-mostly: policies are loaded once from a directory and never change;
session mutations are serialized per session and persisted write-ahead.
All payloads are JSON. Errors carry a machine-readable `code` plus message.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .core import BlockAction, ContingencyState, InfeasibleActionError
from .sessions import SessionStore, TrialSession, _stratum_dict
from .solver import Policy, PolicyLookupError, action_value, arm_split
from .store import BINARY_SUFFIX, TEXT_SUFFIX, header_dict, load


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class CreateTrialRequest(BaseModel):
    policy_id: str


class BlockRequest(BaseModel):
    successes_A: int
    failures_A: int
    successes_B: int
    failures_B: int
    enforce: str = "strict"


def load_policy_dir(policy_dir: str | Path) -> dict[str, Policy]:
    """Load every policy file in a directory, keyed by file stem."""
    policies: dict[str, Policy] = {}
    for path in sorted(Path(policy_dir).iterdir()):
        name = path.name
        for suffix in (TEXT_SUFFIX, BINARY_SUFFIX):
            if name.endswith(suffix):
                policies[name[: -len(suffix)]] = load(path)
                break
    return policies


def _action_dict(action: BlockAction) -> dict:
    return {
        "block_size": action.block_size,
        "allocation": action.allocation,
        "assigned_A": action.assigned_a,
        "assigned_B": action.assigned_b,
    }


def _nearest_levels(levels: tuple[int, ...], total: int) -> list[int]:
    below = [lv for lv in levels if lv < total]
    above = [lv for lv in levels if lv > total]
    out = []
    if below:
        out.append(below[-1])
    if above:
        out.append(above[0])
    return out


def create_app(policy_dir: str | Path, session_dir: str | Path) -> FastAPI:
    app = FastAPI(title="blockrar conduct service")
    policies = load_policy_dir(policy_dir)
    sessions = SessionStore(session_dir)

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422, content={"code": "invalid-request", "message": str(exc.errors())})

    def get_policy(policy_id: str) -> Policy:
        policy = policies.get(policy_id)
        if policy is None:
            raise ApiError(404, "unknown-policy", f"no policy named {policy_id!r}")
        return policy

    def get_session(session_id: str) -> TrialSession:
        session = sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown-session", f"no session {session_id!r}")
        return session

    def policy_meta(policy_id: str, policy: Policy) -> dict:
        meta = {"id": policy_id}
        meta.update(header_dict(policy))
        meta["start_value"] = policy.start_value
        return meta

    def session_view(session: TrialSession) -> dict:
        policy = get_policy(session.policy_id)
        state = session.current_state
        view = {
            "session_id": session.session_id,
            "policy_id": session.policy_id,
            "n_patients": session.n_patients,
            "status": session.status,
            "created_at": session.created_at,
            "current_state": _stratum_dict(state),
            "block_log": [
                {"action": e.action, "stratum": _stratum_dict(e.stratum), "timestamp": e.timestamp}
                for e in session.block_log
            ],
            "recommendation": None,
            "value": None,
            "note": None,
        }
        if session.status == "complete":
            view["value"] = 0.0
            return view
        try:
            view["recommendation"] = _action_dict(policy.lookup_action(state))
            view["value"] = policy.value_at(state)
        except PolicyLookupError as exc:
            near = _nearest_levels(policy.schedule.levels, state.total)
            view["note"] = (
                f"no recommendation: {exc} ({exc.reason}); nearest on-schedule totals: {near}"
            )
        return view

    def recommended_action(policy: Policy, state: ContingencyState) -> BlockAction:
        try:
            return policy.lookup_action(state)
        except PolicyLookupError as exc:
            raise ApiError(422, "off-schedule", f"no recommendation at this state: {exc}") from exc

    @app.get("/policies")
    def list_policies():
        return [policy_meta(pid, pol) for pid, pol in sorted(policies.items())]

    @app.get("/policies/{policy_id}")
    def show_policy(policy_id: str):
        return policy_meta(policy_id, get_policy(policy_id))

    @app.get("/trials")
    def list_trials():
        return [
            {
                "session_id": s.session_id,
                "policy_id": s.policy_id,
                "status": s.status,
                "observed": s.current_state.total,
                "n_patients": s.n_patients,
                "created_at": s.created_at,
            }
            for s in sessions.all_sessions()
        ]

    @app.post("/trials", status_code=201)
    def create_trial(body: CreateTrialRequest):
        policy = get_policy(body.policy_id)
        session = sessions.create(body.policy_id, policy.config.n_patients)
        return session_view(session)

    @app.get("/trials/{session_id}")
    def show_trial(session_id: str):
        return session_view(get_session(session_id))

    @app.post("/trials/{session_id}/blocks")
    def enter_block(session_id: str, body: BlockRequest):
        session = get_session(session_id)
        policy = get_policy(session.policy_id)
        if body.enforce not in ("strict", "free"):
            raise ApiError(422, "invalid-request", f"enforce must be 'strict' or 'free', got {body.enforce!r}")
        counts = (body.successes_A, body.failures_A, body.successes_B, body.failures_B)
        if any(c < 0 for c in counts):
            raise ApiError(422, "invalid-request", "counts must be nonnegative integers")
        with sessions.lock(session_id):
            if session.status == "complete":
                raise ApiError(409, "session-complete", "trial already has all its outcomes")
            state = session.current_state
            arm_a = body.successes_A + body.failures_A
            arm_b = body.successes_B + body.failures_B
            if arm_a + arm_b < 1:
                raise ApiError(422, "invalid-request", "a block must treat at least one patient")
            if state.total + arm_a + arm_b > session.n_patients:
                raise ApiError(
                    422, "overruns-trial",
                    f"block of {arm_a + arm_b} exceeds the {session.n_patients - state.total} patients remaining",
                )
            recommendation: BlockAction | None
            try:
                recommendation = policy.lookup_action(state)
            except PolicyLookupError:
                recommendation = None
            if body.enforce == "strict":
                if recommendation is None:
                    raise ApiError(409, "off-schedule", "state has no recommendation; use enforce=free")
                if (arm_a, arm_b) != (recommendation.assigned_a, recommendation.assigned_b):
                    raise ApiError(
                        409, "strict-mismatch",
                        f"recommended arm split is {recommendation.assigned_a}/{recommendation.assigned_b}, "
                        f"entered {arm_a}/{arm_b}",
                    )
            stratum = ContingencyState(arm_a, body.successes_A, arm_b, body.successes_B)
            matches = (
                recommendation is not None
                and (arm_a, arm_b) == (recommendation.assigned_a, recommendation.assigned_b)
            )
            action_doc = (
                {"block_size": recommendation.block_size, "allocation": recommendation.allocation}
                if matches else None
            )
            sessions.append_block(session, stratum, action_doc)
        return session_view(session)

    @app.get("/trials/{session_id}/whatif")
    def what_if(session_id: str, block_size: int, allocation: float):
        session = get_session(session_id)
        policy = get_policy(session.policy_id)
        if session.status == "complete":
            raise ApiError(409, "session-complete", "trial already has all its outcomes")
        state = session.current_state
        recommended = recommended_action(policy, state)  # 422 off-schedule when the state left the grid
        cfg = policy.config
        matched = [p for p in cfg.allocation_set if abs(p - allocation) < 1e-9]
        if not matched:
            raise ApiError(422, "infeasible", f"allocation {allocation} is not in the policy's set {cfg.allocation_set}")
        phi = matched[0]
        if block_size < cfg.min_block:
            raise ApiError(422, "infeasible", f"block size {block_size} is below the minimum {cfg.min_block}")
        target = state.total + block_size
        if target not in policy.schedule.levels or target not in policy.schedule.viable:
            raise ApiError(
                422, "infeasible",
                f"a block of {block_size} lands on total {target}, which is not an allowed level",
            )
        if min(arm_split(block_size, phi)) < 1:
            raise ApiError(422, "infeasible", f"(T={block_size}, phi={phi}) leaves an arm empty")
        try:
            candidate = BlockAction(block_size, phi)
        except InfeasibleActionError as exc:
            raise ApiError(422, "infeasible", str(exc)) from exc
        return {
            "candidate_value": action_value(policy, state, candidate),
            "recommended_value": action_value(policy, state, recommended),
        }

    return app
