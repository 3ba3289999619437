import json
import socket
import sys
import threading

import pytest
from hypothesis import given, settings, strategies as st

from mcnav.cogmap import ObservationRecord
from mcnav.reasoning import (
    Evidence, GoalSpec, InvalidGoal, OracleConfig, OracleUnavailable, RemoteOracle,
    ScriptedOracle, SocketTransport, Task, revalidation_confidence, serve_stream,
    spatial_score,
)

from oracles import rational_jaccard


def record(attrs=(), step=0, oid=None):
    return ObservationRecord(step, (0.0, 0.0, 0.0), oid, 0.8, 0.2, frozenset(attrs))


def iin(a_int=("brown", "wooden"), a_ext=("carpet",), c="chair"):
    return ScriptedOracle().extract_goal("IIN", {"category": c, "intrinsic": a_int, "extrinsic": a_ext})


# --------------------------------------------------------------- formulas

def test_spatial_score_examples():
    assert spatial_score({"table", "lamp"}, {"table", "desk"}) == pytest.approx(1 / 3)
    assert spatial_score({"a", "b"}, {"a", "b"}) == 1.0
    assert spatial_score(set(), {"table"}) == 0.0
    assert spatial_score(set(), set()) == 0.0


@settings(max_examples=200)
@given(st.sets(st.integers(0, 12)), st.sets(st.integers(0, 12)))
def test_spatial_score_matches_rational(a, b):
    assert abs(spatial_score(a, b) - float(rational_jaccard(a, b))) <= 1e-9


def test_revalidation_confidence_examples():
    assert revalidation_confidence(0.9, 0.6, 0.3) == pytest.approx(0.6)
    assert revalidation_confidence(1, 1, 1) == 1.0
    assert revalidation_confidence(0.9, 0.6, 0.5) < 0.7
    with pytest.raises(ValueError):
        revalidation_confidence(1.2, 0, 0)


@given(st.fractions(0, 1, max_denominator=1000), st.fractions(0, 1, max_denominator=1000),
       st.fractions(0, 1, max_denominator=1000))
def test_revalidation_confidence_rational(a, b, c):
    assert abs(revalidation_confidence(float(a), float(b), float(c)) - float((a + b + c) / 3)) <= 1e-9


# --------------------------------------------------------------- goals

def test_extract_goal_on():
    g = ScriptedOracle().extract_goal("ON", "bed")
    assert g.task is Task.ON and g.a_int is None and g.a_ext is None
    assert 3 <= len(g.context) <= 10 and "bed" not in g.context


def test_extract_goal_iin_passthrough():
    assert iin().a_int == {"brown", "wooden"}


def test_extract_goal_text_description():
    g = ScriptedOracle().extract_goal("TN", "chair_brown_frame")
    assert g.category == "chair"
    assert {"carpet", "beige_wall"} <= g.a_ext


@pytest.mark.parametrize("task,payload", [("ON", ""), ("IIN", {}), ("TN", "no_such_text"), ("IIN", {"x": 1})])
def test_extract_goal_invalid(task, payload):
    with pytest.raises(InvalidGoal):
        ScriptedOracle().extract_goal(task, payload)


def test_goalspec_invariants():
    with pytest.raises(InvalidGoal):
        GoalSpec("ON", "bed", {"red"}, None, ("lamp",))
    with pytest.raises(InvalidGoal):
        GoalSpec("IIN", "bed", None, None, ())
    with pytest.raises(InvalidGoal):
        GoalSpec("IIN", "bed", None, None, ("bed", "lamp"))


# --------------------------------------------------------------- scripted oracle

def test_score_candidate_examples():
    o = ScriptedOracle()
    g = iin()
    same = record(["int:brown", "int:wooden", "ext:carpet"])
    assert (o.score_candidate([same], g).s_int, o.score_candidate([same], g).s_ext) == (1.0, 1.0)
    v = o.score_candidate([record(["int:red", "ext:hallway"])], g)
    assert (v.s_int, v.s_ext) == (0.0, 0.0)
    v = o.score_candidate([record(["int:brown", "int:metal"])], g)
    assert v.s_int == float(rational_jaccard({"brown", "metal"}, {"brown", "wooden"}))


def test_score_candidate_absent_attrs_and_top_record():
    o = ScriptedOracle()
    g = ScriptedOracle().extract_goal("ON", "chair")
    assert o.score_candidate([record(["int:red"])], g).s_int == 1.0
    best, worse = record(["int:brown", "int:wooden", "ext:carpet"]), record([])
    assert o.score_candidate([best, worse], iin()).s_int == 1.0


TOKENS = ["brown", "wooden", "red", "metal", "round"]


@given(st.sets(st.sampled_from(TOKENS)), st.sampled_from(["brown", "wooden"]))
def test_score_candidate_monotone(seen, extra):
    o, g = ScriptedOracle(), iin()
    before = o.score_candidate([record(["int:" + t for t in seen])], g).s_int
    after = o.score_candidate([record(["int:" + t for t in seen | {extra}])], g).s_int
    assert after >= before


def test_infer_nearby_examples():
    o = ScriptedOracle()
    g = iin(a_ext=("carpet", "beige_wall"))
    assert o.infer_nearby_likelihood([record()], g, g.context[0]) == 0.6
    outside = next(c for c in ("sofa", "bathtub") if c not in g.context[:3])
    assert o.infer_nearby_likelihood([record()], g, outside) == 0.0
    full = [record(["ext:carpet"]), record(["ext:beige_wall"])]
    assert o.infer_nearby_likelihood(full, g, outside) == 1.0


def test_verify_instance_examples():
    o = ScriptedOracle()
    g = iin(a_int=("brown", "wooden"), a_ext=("carpet", "corner"))
    exact = Evidence("chair", frozenset({"int:brown", "int:wooden", "ext:carpet", "ext:corner"}), None, 0)
    assert o.verify_instance(exact, g, 0.7)
    half = Evidence("chair", frozenset({"int:brown", "ext:carpet"}), None, 0)
    assert not o.verify_instance(half, g, 0.7)
    on = ScriptedOracle().extract_goal("ON", "chair")
    assert o.verify_instance(Evidence("chair", frozenset(), None, 0), on, 0.7)
    assert not o.verify_instance(Evidence("sofa", frozenset(), None, 0), on, 0.7)


@given(st.sets(st.sampled_from(["int:" + t for t in TOKENS])), st.sampled_from(["chair", "bed"]))
def test_verify_on_ignores_attributes(attrs, cat):
    o = ScriptedOracle()
    on = GoalSpec("ON", "chair", None, None, ("table", "lamp", "rug"))
    ev = Evidence(cat, frozenset(attrs), None, 3)
    assert o.verify_instance(ev, on, 0.7) == (cat == "chair")


def test_unreliable_modes_are_deterministic_and_targeted():
    cfg = OracleConfig(seed=4, miss_prob=1.0, flaky_prob=1.0, goal_object_id="goal")
    o = ScriptedOracle(cfg)
    g = ScriptedOracle().extract_goal("ON", "chair")
    # first-sight miss on the real goal, recovered once the question is asked again later
    assert not o.verify_instance(Evidence("chair", frozenset(), "goal", 0, "first_sight"), g, 0.7)
    assert o.verify_instance(Evidence("chair", frozenset(), "goal", 9, "scan"), g, 0.7)
    # a look-alike accepted when flaky
    assert o.verify_instance(Evidence("chair", frozenset(), "other", 0), iin(), 0.7)
    # a different category is never accepted
    assert not o.verify_instance(Evidence("sofa", frozenset(), "other", 0), g, 0.7)
    runs = []
    for _ in range(2):
        o2 = ScriptedOracle(OracleConfig(seed=1, flaky_prob=0.5, score_noise=0.2, goal_object_id="g"))
        runs.append([o2.verify_instance(Evidence("chair", frozenset(), "x", k), iin(), 0.7)
                     for k in range(40)]
                    + [o2.score_candidate([record(["int:brown"], k, "x")], iin()).s_int for k in range(20)])
    assert runs[0] == runs[1]
    assert 5 < sum(runs[0][:40]) < 35


def test_call_log_drains():
    o = ScriptedOracle()
    o.score_candidate([record()], iin())
    calls = o.drain_calls()
    assert [c["op"] for c in calls] == ["score_candidate"] and o.drain_calls() == []


# --------------------------------------------------------------- remote oracle

class Peer:
    """One-connection socket peer; ``mode`` selects its behaviour."""

    def __init__(self, mode="ok"):
        self.srv = socket.create_server(("127.0.0.1", 0))
        self.port = self.srv.getsockname()[1]
        self.mode = mode
        self.requests = 0
        threading.Thread(target=self._run, daemon=True).start()

    def _run(self):
        while True:
            try:
                conn, _ = self.srv.accept()
            except OSError:
                return
            with conn, conn.makefile("r") as rf, conn.makefile("w") as wf:
                if self.mode == "ok":
                    serve_stream(ScriptedOracle(), rf, wf)
                    continue
                for line in rf:
                    self.requests += 1
                    if self.mode == "garbage":
                        wf.write(json.dumps({"s_int": 0.5}) + "\n")
                        wf.flush()
                    elif self.mode == "flaky_once" and self.requests == 1:
                        break
                    elif self.mode == "flaky_once":
                        wf.write(json.dumps({"is_match": True}) + "\n")
                        wf.flush()
                    # "silent": never answer

    def close(self):
        self.srv.close()


def test_remote_matches_scripted():
    peer = Peer("ok")
    try:
        remote = RemoteOracle.connect(f"127.0.0.1:{peer.port}")
        local = ScriptedOracle()
        g = remote.extract_goal("IIN", {"category": "chair", "intrinsic": ["brown"], "extrinsic": ["carpet"]})
        assert g == local.extract_goal("IIN", {"category": "chair", "intrinsic": ["brown"], "extrinsic": ["carpet"]})
        recs = [record(["int:brown", "int:metal", "ext:carpet"])]
        assert remote.score_candidate(recs, g).s_int == local.score_candidate(recs, g).s_int
        assert remote.infer_nearby_likelihood(recs, g, "table") == local.infer_nearby_likelihood(recs, g, "table")
        ev = Evidence("chair", frozenset({"int:brown", "ext:carpet"}), None, 2)
        assert remote.verify_instance(ev, g, 0.7) == local.verify_instance(ev, g, 0.7)
        remote.transport.close()
    finally:
        peer.close()


def test_remote_malformed_reply():
    peer = Peer("garbage")
    try:
        remote = RemoteOracle(SocketTransport("127.0.0.1", peer.port))
        with pytest.raises(OracleUnavailable):
            remote.verify_instance(Evidence("chair", frozenset(), None, 0), iin(), 0.7)
        assert peer.requests == 2  # one retry
    finally:
        peer.close()


def test_remote_timeout_then_retry_succeeds():
    peer = Peer("flaky_once")
    try:
        remote = RemoteOracle(SocketTransport("127.0.0.1", peer.port), timeout=0.5)
        assert remote.verify_instance(Evidence("chair", frozenset(), None, 0), iin(), 0.7) is True
    finally:
        peer.close()


def test_remote_timeout():
    peer = Peer("silent")
    try:
        remote = RemoteOracle(SocketTransport("127.0.0.1", peer.port), timeout=0.2)
        with pytest.raises(OracleUnavailable):
            remote.verify_instance(Evidence("chair", frozenset(), None, 0), iin(), 0.7)
    finally:
        peer.close()


def test_remote_refused():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(OracleUnavailable):
        RemoteOracle.connect(f"127.0.0.1:{port}", timeout=0.5).extract_goal("ON", "bed")


def test_remote_stdio_peer():
    cmd = f"stdio:{sys.executable} -m mcnav.oracle_peer"
    remote = RemoteOracle.connect(cmd, timeout=5.0)
    try:
        assert remote.extract_goal("ON", "bed").category == "bed"
    finally:
        remote.transport.close()
