import json

import pytest

from bnforge.dsl import serialize_kb
from bnforge.kbver import Store, UnknownVersion, apply_diff, change_to_json, diff_kbs, log, version_id

from fixtures import CLEAN_KB, demo_kb, kb


@pytest.fixture
def store(tmp_path):
    return Store(tmp_path / "store")


def test_empty_log(store):
    assert log(store) == []
    assert store.head() is None


def test_chain_log(store):
    a = store.snapshot(kb(CLEAN_KB), "first", "initial elicitation", timestamp="2020-01-01")
    b = store.snapshot(kb(CLEAN_KB.replace("0.2, 0.5, 0.3", "0.3, 0.4, 0.3")), "second", parent=a.version_id, timestamp="2020-01-02")
    assert [v.version_id for v in log(store)] == [a.version_id, b.version_id]
    assert store.head() == b.version_id
    assert store.version(b.version_id).parent_id == a.version_id


def test_siblings_by_timestamp_then_id(store):
    root = store.snapshot(kb(CLEAN_KB), "root", timestamp="t0")
    kids = [
        store.snapshot(kb(CLEAN_KB.replace("(0.1, 0.2, 0.7)", f"(0.1, 0.{i}, 0.{9 - i})")), f"kid {i}", parent=root.version_id, timestamp=ts)
        for i, ts in ((3, "t2"), (4, "t1"), (5, "t1"))
    ]
    order = [v.message for v in log(store)]
    same_time = sorted(kids[1:], key=lambda v: v.version_id)
    assert order == ["root", *[v.message for v in same_time], "kid 3"]


def test_children_follow_their_parent(store):
    a = store.snapshot(kb(CLEAN_KB), "a", timestamp="t5")
    b = store.snapshot(kb(CLEAN_KB.replace("0.2, 0.5, 0.3", "0.3, 0.4, 0.3")), "b", parent=a.version_id, timestamp="t1")
    assert [v.version_id for v in log(store)] == [a.version_id, b.version_id]


def test_whitespace_edit_keeps_id(store):
    spaced = CLEAN_KB.replace("\n", "\n\n").replace("  var", "      var")
    assert version_id(kb(spaced)) == version_id(kb(CLEAN_KB))
    first = store.snapshot(kb(CLEAN_KB), "one", timestamp="a")
    again = store.snapshot(kb(spaced), "two", timestamp="b")
    assert again == first
    assert len(log(store)) == 1


def test_store_round_trip(store):
    v = store.snapshot(demo_kb(), "demo")
    assert serialize_kb(store.load(v.version_id)) == serialize_kb(demo_kb())
    assert (store.objects / f"{v.version_id}.bnkb").exists()
    record = json.loads(store.log_path.read_text().splitlines()[0])
    assert set(record) == {"id", "parent", "message", "rationale", "timestamp"}


def test_single_row_edit(store):
    old = kb(CLEAN_KB)
    new = kb(CLEAN_KB.replace("(mid): (0.6, 0.4)", "(mid): (0.55, 0.45)"))
    (change,) = diff_kbs(old, new)
    assert change.kind == "cpt_row"
    assert change.op == "changed"
    assert change.path == ("fragments", "detect", "variables", "Detect", "rows", "(mid)")
    assert change.before == (("mid",), (0.6, 0.4))
    assert change.after == (("mid",), (0.55, 0.45))
    assert "fragments/detect/variables/Detect/rows/(mid)" in change.describe()


def test_rename_is_remove_plus_add():
    changes = diff_kbs(kb(CLEAN_KB), kb(CLEAN_KB.replace("fragment world", "fragment globe").replace("world.Distance", "globe.Distance")))
    ops = {(c.kind, c.op, c.path[-1]) for c in changes}
    assert ("fragment", "removed", "world") in ops
    assert ("fragment", "added", "globe") in ops


def test_reordering_is_reported():
    start = CLEAN_KB.index("fragment world")
    mid = CLEAN_KB.index("fragment detect")
    end = CLEAN_KB.index("stub later")
    text = CLEAN_KB[:start] + CLEAN_KB[mid:end] + CLEAN_KB[start:mid] + CLEAN_KB[end:]
    changes = list(diff_kbs(kb(CLEAN_KB), kb(text)))
    assert [c.op for c in changes] == ["reordered"]
    assert changes[0].before == ["world", "detect", "later"]
    assert changes[0].after == ["detect", "world", "later"]


def test_apply_reproduces_target():
    old = kb(CLEAN_KB)
    new = kb(CLEAN_KB.replace("(near): (0.9, 0.1)", "(near): (0.95, 0.05)").replace("stub later", "stub after"))
    patched = apply_diff(old, diff_kbs(old, new))
    assert serialize_kb(patched) == serialize_kb(new)


def test_changes_serialize():
    old = kb(CLEAN_KB)
    new = kb(CLEAN_KB.replace("(mid): (0.6, 0.4)", "(mid): (0.55, 0.45)"))
    doc = change_to_json(diff_kbs(old, new).changes[0])
    assert json.loads(json.dumps(doc)) == doc


def test_unknown_versions(store):
    with pytest.raises(UnknownVersion):
        store.load("0" * 64)
    with pytest.raises(UnknownVersion):
        store.resolve("abc")
    with pytest.raises(UnknownVersion):
        store.snapshot(kb(CLEAN_KB), "orphan", parent="f" * 64)


def test_prefix_resolution(store):
    v = store.snapshot(kb(CLEAN_KB), "x")
    assert store.resolve(v.version_id[:10]) == v.version_id
