"""Goal specification, memory-strategy scores and the oracle interfaces.

Two oracle implementations share one contract. ``ScriptedOracle`` answers
from attribute tokens and a co-occurrence table, with optional seeded
unreliability. ``RemoteOracle`` forwards every question to a peer process
as newline-delimited JSON.
"""
from __future__ import annotations

import enum
import hashlib
import json
import socket
import subprocess
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass

from . import vocab
from .cogmap import ObservationRecord

MIN_CONTEXT = 3
MAX_CONTEXT = 10
CONTEXT_BOOST = 0.6
BOOST_TOP_K = 3
DEFAULT_TIMEOUT = 10.0


class Task(str, enum.Enum):
    ON = "ON"
    IIN = "IIN"
    TN = "TN"


class InvalidGoal(ValueError):
    pass


class OracleUnavailable(RuntimeError):
    """The remote peer timed out, hung up or sent a malformed reply."""


def _tokens(values) -> frozenset | None:
    if values is None:
        return None
    out = frozenset(str(v) for v in values)
    return out or None


@dataclass(frozen=True)
class GoalSpec:
    task: Task
    category: str
    a_int: frozenset | None = None
    a_ext: frozenset | None = None
    context: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "a_int", _tokens(self.a_int))
        object.__setattr__(self, "a_ext", _tokens(self.a_ext))
        object.__setattr__(self, "context", tuple(self.context))
        if not self.category:
            raise InvalidGoal("goal category is empty")
        if self.task is Task.ON and (self.a_int is not None or self.a_ext is not None):
            raise InvalidGoal("object-goal tasks carry no attributes")
        if not self.context:
            raise InvalidGoal("context category list is empty")
        if self.category in self.context:
            raise InvalidGoal(f"goal category {self.category!r} listed as its own context")

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "c": self.category,
            "a_int": sorted(self.a_int) if self.a_int is not None else None,
            "a_ext": sorted(self.a_ext) if self.a_ext is not None else None,
            "c_llm": list(self.context),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> GoalSpec:
        return cls(doc["task"], doc["c"], doc.get("a_int"), doc.get("a_ext"), doc["c_llm"])


@dataclass(frozen=True)
class CandidateVerdict:
    s_int: float
    s_ext: float
    reasoning: str = ""

    def __post_init__(self):
        for name in ("s_int", "s_ext"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of range: {v}")


@dataclass(frozen=True)
class Evidence:
    """What the agent currently sees of one candidate object.

    ``context`` says why the question is asked: ``first_sight`` while
    exploring, ``scan`` after a full turn in place, ``arrival`` for the
    final check next to the object.
    """

    category: str
    visible_attrs: frozenset
    object_id_hint: str | None
    step: int
    context: str = "first_sight"

    @classmethod
    def from_record(cls, category: str, rec: ObservationRecord, context: str = "first_sight") -> Evidence:
        return cls(category, rec.visible_attrs, rec.object_id_hint, rec.step, context)

    def summary(self) -> dict:
        return {"category": self.category, "attrs": sorted(self.visible_attrs),
                "step": self.step, "context": self.context}


# ------------------------------------------------------------------ scores

def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def spatial_score(neighbor_cats, context) -> float:
    """Overlap between the categories seen around a node and the goal's
    expected context, as intersection over union (0 when both are empty)."""
    return jaccard(neighbor_cats, context)


def revalidation_confidence(s_int: float, s_ext: float, s_spa: float) -> float:
    for name, v in (("s_int", s_int), ("s_ext", s_ext), ("s_spa", s_spa)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return (s_int + s_ext + s_spa) / 3.0


def split_attrs(attrs) -> tuple[set, set]:
    """Strip the namespace prefixes into (intrinsic, extrinsic) token sets."""
    ni, ne = len(vocab.INTRINSIC_PREFIX), len(vocab.EXTRINSIC_PREFIX)
    intr = {a[ni:] for a in attrs if a.startswith(vocab.INTRINSIC_PREFIX)}
    extr = {a[ne:] for a in attrs if a.startswith(vocab.EXTRINSIC_PREFIX)}
    return intr, extr


# ------------------------------------------------------------------ oracles

class Oracle(ABC):
    """Stand-in for the language and vision-language models."""

    @abstractmethod
    def extract_goal(self, task: Task | str, payload) -> GoalSpec: ...

    @abstractmethod
    def score_candidate(self, records: list[ObservationRecord], goal: GoalSpec) -> CandidateVerdict: ...

    @abstractmethod
    def infer_nearby_likelihood(self, records: list[ObservationRecord], goal: GoalSpec,
                                category: str) -> float: ...

    @abstractmethod
    def verify_instance(self, evidence: Evidence, goal: GoalSpec, tau_t: float) -> bool: ...

    def drain_calls(self) -> list[dict]:
        """Return and clear the log of calls made since the last drain."""
        return []


def _context_for(category: str) -> tuple[str, ...]:
    ctx = vocab.CO_OCCURRENCE.get(category, vocab.BASE_CATEGORIES)
    ctx = tuple(c for c in ctx if c != category)[:MAX_CONTEXT]
    if len(ctx) < MIN_CONTEXT:
        raise InvalidGoal(f"no context knowledge for {category!r}")
    return ctx


def goal_from_payload(task: Task | str, payload) -> GoalSpec:
    """Scripted goal extraction shared by the scripted oracle and the peer server.

    ON takes a category string. IIN takes the goal object's attribute bundle
    ``{"category", "intrinsic", "extrinsic"}``. TN takes the same bundle or the
    key of a stored text description.
    """
    task = Task(task)
    if not payload:
        raise InvalidGoal("empty goal payload")
    if task is Task.ON:
        if not isinstance(payload, str):
            raise InvalidGoal("object-goal payload must be a category name")
        return GoalSpec(task, payload, None, None, _context_for(payload))
    if isinstance(payload, str):
        if task is Task.TN and payload in vocab.TEXT_GOALS:
            payload = vocab.TEXT_GOALS[payload]
        else:
            raise InvalidGoal(f"unknown goal description {payload!r}")
    try:
        category = payload["category"]
    except (KeyError, TypeError):
        raise InvalidGoal("goal payload lacks a category") from None
    if not category:
        raise InvalidGoal("goal payload lacks a category")
    return GoalSpec(task, category, payload.get("intrinsic"), payload.get("extrinsic"),
                    _context_for(category))


def _unit_hash(*parts) -> float:
    """Deterministic uniform value in [0, 1) from arbitrary key parts."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2.0 ** 64


@dataclass(frozen=True)
class OracleConfig:
    """Scripted-oracle behaviour.

    miss_prob: chance that an object's identity is not recognised at first
        sight; later questions about it (after a scan, or on arrival) are
        answered correctly.
    flaky_prob: chance that a single question about a same-category object
        that is not the goal is answered as if it were the goal.
    score_noise: half-width of uniform noise added to attribute scores.
    """

    seed: int = 0
    miss_prob: float = 0.0
    flaky_prob: float = 0.0
    score_noise: float = 0.0
    goal_object_id: str | None = None

    def __post_init__(self):
        for name in ("miss_prob", "flaky_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.score_noise < 0:
            raise ValueError("score_noise must be non-negative")

    @property
    def perfect(self) -> bool:
        return self.miss_prob == 0 and self.flaky_prob == 0 and self.score_noise == 0


class ScriptedOracle(Oracle):
    """Deterministic oracle answering from attribute tokens.

    The unreliability model needs to know which object is the real goal;
    that ground truth comes from ``config.goal_object_id`` and the
    ``object_id_hint`` on records, never from the strategies.
    """

    def __init__(self, config: OracleConfig | None = None):
        self.config = config or OracleConfig()
        self._calls: list[dict] = []

    def drain_calls(self) -> list[dict]:
        out, self._calls = self._calls, []
        return out

    def _log(self, op: str, **kw) -> None:
        self._calls.append({"op": op, **kw})

    def _is_decoy(self, oid: str | None, category: str, goal: GoalSpec) -> bool:
        gid = self.config.goal_object_id
        return gid is not None and oid is not None and oid != gid and category == goal.category

    def _draw(self, *key) -> float:
        return _unit_hash(self.config.seed, *key)

    def extract_goal(self, task, payload) -> GoalSpec:
        goal = goal_from_payload(task, payload)
        self._log("extract_goal", c=goal.category)
        return goal

    def score_candidate(self, records, goal, category: str | None = None) -> CandidateVerdict:
        if not records:
            raise ValueError("score_candidate needs at least one record")
        top = records[0]
        intr, extr = split_attrs(top.visible_attrs)
        s_int = 1.0 if goal.a_int is None else jaccard(intr, goal.a_int)
        s_ext = 1.0 if goal.a_ext is None else jaccard(extr, goal.a_ext)
        why = "attribute overlap"
        cfg = self.config
        if cfg.flaky_prob and self._is_decoy(top.object_id_hint, category or goal.category, goal) \
                and self._draw("score", top.object_id_hint) < cfg.flaky_prob:
            s_int, s_ext, why = 1.0, 1.0, "judged a match"
        if cfg.score_noise:
            for i, name in enumerate(("int", "ext")):
                u = self._draw("noise", name, top.object_id_hint, top.step)
                delta = (2 * u - 1) * cfg.score_noise
                if i == 0:
                    s_int = min(1.0, max(0.0, s_int + delta))
                else:
                    s_ext = min(1.0, max(0.0, s_ext + delta))
        self._log("score_candidate", object=top.object_id_hint, s_int=round(s_int, 9),
                  s_ext=round(s_ext, 9))
        return CandidateVerdict(s_int, s_ext, why)

    def infer_nearby_likelihood(self, records, goal, category) -> float:
        if not records:
            raise ValueError("infer_nearby_likelihood needs at least one record")
        seen: set = set()
        for r in records:
            seen |= split_attrs(r.visible_attrs)[1]
        value = jaccard(seen, goal.a_ext) if goal.a_ext else 0.0
        if category in goal.context[:BOOST_TOP_K]:
            value = max(value, CONTEXT_BOOST)
        self._log("infer_nearby", category=category, likelihood=round(value, 9))
        return value

    def verify_instance(self, evidence: Evidence, goal: GoalSpec, tau_t: float) -> bool:
        if evidence.category != goal.category:
            matched = False
        elif goal.task is Task.ON:
            matched = True
        else:
            intr, extr = split_attrs(evidence.visible_attrs)
            s_int = 1.0 if goal.a_int is None else jaccard(intr, goal.a_int)
            s_ext = 1.0 if goal.a_ext is None else jaccard(extr, goal.a_ext)
            matched = (s_int + s_ext) / 2.0 >= tau_t
        cfg = self.config
        oid = evidence.object_id_hint
        if matched and cfg.miss_prob and evidence.context == "first_sight" \
                and oid == cfg.goal_object_id and self._draw("miss", oid) < cfg.miss_prob:
            matched = False
        if not matched and cfg.flaky_prob and self._is_decoy(oid, evidence.category, goal) \
                and self._draw("verify", oid, evidence.step, evidence.context) < cfg.flaky_prob:
            matched = True
        self._log("verify_instance", object=oid, context=evidence.context, is_match=matched)
        return matched


# ------------------------------------------------------------------ remote

class _Transport(ABC):
    @abstractmethod
    def exchange(self, line: str, timeout: float) -> str: ...

    def close(self) -> None:
        pass


class SocketTransport(_Transport):
    def __init__(self, host: str, port: int):
        self.address = (host, port)
        self._sock: socket.socket | None = None
        self._buf = b""

    def _connect(self, timeout: float) -> socket.socket:
        if self._sock is None:
            self._sock = socket.create_connection(self.address, timeout=timeout)
            self._buf = b""
        return self._sock

    def exchange(self, line: str, timeout: float) -> str:
        try:
            sock = self._connect(timeout)
            sock.settimeout(timeout)
            sock.sendall(line.encode() + b"\n")
            deadline = time.monotonic() + timeout
            while b"\n" not in self._buf:
                sock.settimeout(max(0.001, deadline - time.monotonic()))
                chunk = sock.recv(65536)
                if not chunk:
                    raise ConnectionError("peer closed the connection")
                self._buf += chunk
        except OSError:
            self.close()
            raise
        reply, self._buf = self._buf.split(b"\n", 1)
        return reply.decode()

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


class StdioTransport(_Transport):
    """Talk to a peer subprocess over its stdin and stdout."""

    def __init__(self, argv: list[str]):
        self.argv = list(argv)
        self._proc: subprocess.Popen | None = None

    def exchange(self, line: str, timeout: float) -> str:
        import selectors

        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          bufsize=0)
        proc = self._proc
        try:
            proc.stdin.write(line.encode() + b"\n")
            proc.stdin.flush()
        except OSError:
            self.close()
            raise
        sel = selectors.DefaultSelector()
        sel.register(proc.stdout, selectors.EVENT_READ)
        buf = b""
        deadline = time.monotonic() + timeout
        try:
            while not buf.endswith(b"\n"):
                left = deadline - time.monotonic()
                if left <= 0 or not sel.select(left):
                    self.close()
                    raise TimeoutError("oracle peer did not answer in time")
                chunk = proc.stdout.read1(65536) if hasattr(proc.stdout, "read1") else proc.stdout.read(1)
                if not chunk:
                    self.close()
                    raise ConnectionError("oracle peer exited")
                buf += chunk
        finally:
            sel.close()
        return buf.decode().rstrip("\n")

    def close(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None


_REPLY_KEYS = {
    "score_candidate": {"s_int", "s_ext", "reasoning"},
    "infer_nearby": {"likelihood", "reasoning"},
    "verify_instance": {"is_match"},
    "extract_goal": {"c", "a_int", "a_ext", "c_llm"},
}


def _unit(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
        raise ValueError(f"score out of range: {v!r}")
    return float(v)


class RemoteOracle(Oracle):
    """Client for a peer that answers oracle questions over a byte stream."""

    def __init__(self, transport: _Transport, timeout: float = DEFAULT_TIMEOUT, retries: int = 1):
        self.transport = transport
        self.timeout = timeout
        self.retries = retries
        self._calls: list[dict] = []

    @classmethod
    def connect(cls, address: str, **kw) -> RemoteOracle:
        """``host:port`` for a socket peer or ``stdio:<command line>``."""
        if address.startswith("stdio:"):
            import shlex
            return cls(StdioTransport(shlex.split(address[len("stdio:"):])), **kw)
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad oracle address {address!r}")
        return cls(SocketTransport(host, int(port)), **kw)

    def drain_calls(self) -> list[dict]:
        out, self._calls = self._calls, []
        return out

    def _request(self, op: str, goal: dict, evidence: list) -> dict:
        line = json.dumps({"op": op, "goal": goal, "evidence": evidence}, sort_keys=True)
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                reply = json.loads(self.transport.exchange(line, self.timeout))
                if not isinstance(reply, dict) or set(reply) != _REPLY_KEYS[op]:
                    raise ValueError(f"reply keys {sorted(reply) if isinstance(reply, dict) else reply!r}")
                self._calls.append({"op": op, "reply": reply})
                return reply
            except (OSError, TimeoutError, ValueError) as exc:
                last = exc
        raise OracleUnavailable(f"{op}: {last}") from last

    def extract_goal(self, task, payload) -> GoalSpec:
        task = Task(task)
        reply = self._request("extract_goal", {"task": task.value, "payload": payload}, [])
        try:
            return GoalSpec(task, reply["c"], reply["a_int"], reply["a_ext"], reply["c_llm"])
        except (InvalidGoal, TypeError) as exc:
            raise OracleUnavailable(f"extract_goal: {exc}") from exc

    def score_candidate(self, records, goal, category: str | None = None) -> CandidateVerdict:
        reply = self._request("score_candidate", goal.to_dict(), [r.summary() for r in records])
        try:
            return CandidateVerdict(_unit(reply["s_int"]), _unit(reply["s_ext"]), str(reply["reasoning"]))
        except ValueError as exc:
            raise OracleUnavailable(f"score_candidate: {exc}") from exc

    def infer_nearby_likelihood(self, records, goal, category) -> float:
        ev = [dict(r.summary(), category=category) for r in records]
        reply = self._request("infer_nearby", goal.to_dict(), ev)
        try:
            return _unit(reply["likelihood"])
        except ValueError as exc:
            raise OracleUnavailable(f"infer_nearby: {exc}") from exc

    def verify_instance(self, evidence, goal, tau_t) -> bool:
        reply = self._request("verify_instance", dict(goal.to_dict(), tau_t=tau_t), [evidence.summary()])
        if not isinstance(reply["is_match"], bool):
            raise OracleUnavailable("verify_instance: is_match is not a boolean")
        return reply["is_match"]


def answer_request(oracle: ScriptedOracle, request: dict) -> dict:
    """Peer-side handler: answer one wire request with a scripted oracle."""
    op = request["op"]
    ev = request.get("evidence", [])
    if op == "extract_goal":
        g = goal_from_payload(request["goal"]["task"], request["goal"]["payload"])
        d = g.to_dict()
        return {"c": d["c"], "a_int": d["a_int"], "a_ext": d["a_ext"], "c_llm": d["c_llm"]}
    goal = GoalSpec.from_dict(request["goal"])
    recs = [ObservationRecord(e["step"], tuple(e.get("pose", (0, 0, 0))), None, e["confidence"],
                              e["area_ratio"], frozenset(e["attrs"])) for e in ev if "confidence" in e]
    if op == "score_candidate":
        v = oracle.score_candidate(recs, goal)
        return {"s_int": v.s_int, "s_ext": v.s_ext, "reasoning": v.reasoning}
    if op == "infer_nearby":
        cat = ev[0].get("category", "") if ev else ""
        return {"likelihood": oracle.infer_nearby_likelihood(recs, goal, cat), "reasoning": "scripted"}
    if op == "verify_instance":
        e = ev[0]
        evidence = Evidence(e["category"], frozenset(e["attrs"]), None, e["step"], e["context"])
        return {"is_match": oracle.verify_instance(evidence, goal, request["goal"]["tau_t"])}
    raise ValueError(f"unknown op {op!r}")


def serve_stream(oracle: ScriptedOracle, rfile, wfile) -> None:
    """Answer newline-delimited requests from text stream ``rfile`` until
    end of input, writing one reply line per request to ``wfile``."""
    for line in rfile:
        if isinstance(line, bytes):
            line = line.decode()
        if not line.strip():
            continue
        wfile.write(json.dumps(answer_request(oracle, json.loads(line)), sort_keys=True) + "\n")
        wfile.flush()

