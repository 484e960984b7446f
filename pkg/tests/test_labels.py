import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from k8ntext import labels


def test_default_registry_m_is_59(registry):
    assert registry.m == 59


def test_lexicographic_resource_ids():
    reg = labels.ActionRegistry(
        [("core", "v1", "namespaces", ""), ("core", "v1", "pods", "")],
        ["create", "delete", "get"],
    )
    assert reg.lookup("core", "v1", "namespaces") == (0, 0)
    assert reg.lookup("core", "v1", "pods") == (1, 0)


def test_verb_ids_follow_catalog_order():
    reg = labels.ActionRegistry([("core", "v1", "pods", "")], ["create", "delete", "get"])
    assert reg.verb_id("create") == 0
    assert reg.verb_id("delete") == 1
    assert reg.verb_id("get") == 2


def test_duplicate_catalog_row_rejected():
    rows = [("core", "v1", "pods", ""), ("core", "v1", "pods", "")]
    with pytest.raises(labels.CatalogError):
        labels.ActionRegistry(rows, ["get"])


def test_registry_rebuild_is_identical(registry):
    again = labels.build_registry()
    assert again.rows == registry.rows
    assert again.verbs == registry.verbs
    assert again.content_hash() == registry.content_hash()


def test_empty_group_means_core(registry):
    assert registry.lookup("", "v1", "pods") == registry.lookup("core", "v1", "pods")


# --- derive_label -------------------------------------------------------------


def test_derive_label_namespaced_single(registry, make_event):
    event = make_event(objectRef={"resource": "pods", "apiVersion": "v1",
                                  "namespace": "default", "name": "x"}, verb="create")
    t = labels.derive_label(event, registry)
    assert (t.n, t.u) == (1, 1)
    assert t.v == registry.verb_id("create")
    assert (t.r, t.s) == registry.lookup("core", "v1", "pods")


def test_derive_label_cluster_wide_list(registry, make_event):
    event = make_event(objectRef={"resource": "pods", "apiVersion": "v1"}, verb="list")
    t = labels.derive_label(event, registry)
    assert (t.n, t.u) == (0, 0)


def test_derive_label_nonnamespaced_get(registry, make_event):
    event = make_event(objectRef={"resource": "nodes", "apiVersion": "v1",
                                  "name": "worker-1"}, verb="get")
    t = labels.derive_label(event, registry)
    assert (t.n, t.u) == (0, 1)
    assert t.s == 0


def test_derive_label_unknown_resource(registry, make_event):
    event = make_event(objectRef={"resource": "mycrds", "apiGroup": "example.com",
                                  "apiVersion": "v1", "name": "a"})
    with pytest.raises(labels.UnknownAction):
        labels.derive_label(event, registry)


# --- integer codec --------------------------------------------------------------


def test_encode_zero_tuple():
    assert labels.encode_tuple(labels.LabelTuple(0, 0, 0, 0, 0)) == 0


def test_encode_worked_example():
    # (((17*64 + 0)*64 + 2)*2 + 1)*2 + 1
    assert labels.encode_tuple(labels.LabelTuple(17, 0, 2, 1, 1)) == 278539


def test_decode_worked_example():
    assert labels.decode_tuple(278539) == labels.LabelTuple(17, 0, 2, 1, 1)


def test_encode_out_of_range():
    with pytest.raises(labels.OutOfRange):
        labels.encode_tuple(labels.LabelTuple(0, 64, 0, 0, 0))
    with pytest.raises(labels.OutOfRange):
        labels.encode_tuple(labels.LabelTuple(0, 0, 64, 0, 0))
    with pytest.raises(labels.OutOfRange):
        labels.encode_tuple(labels.LabelTuple(-1, 0, 0, 0, 0))
    with pytest.raises(labels.OutOfRange):
        labels.encode_tuple(labels.LabelTuple(0, 0, 0, 2, 0))


@given(
    r=st.integers(0, 127),
    s=st.integers(0, 63),
    v=st.integers(0, 63),
    n=st.integers(0, 1),
    u=st.integers(0, 1),
)
@settings(max_examples=300)
def test_codec_roundtrip_property(r, s, v, n, u):
    t = labels.LabelTuple(r, s, v, n, u)
    assert labels.decode_tuple(labels.encode_tuple(t)) == t


# --- one-hot ----------------------------------------------------------------------


def test_one_hot_block_is_5_by_59(registry):
    block = labels.one_hot(labels.LabelTuple(3, 1, 2, 1, 0), registry)
    assert block.shape == (5, 59)
    assert block.size == 295
    assert (block.sum(axis=1) == 1).all()


def test_one_hot_zero_tuple_rows(registry):
    block = labels.one_hot(labels.LabelTuple(0, 0, 0, 0, 0), registry)
    assert (block.argmax(axis=1) == 0).all()
    assert (block[:, 0] == 1).all()


def test_one_hot_roundtrip_random(registry):
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = labels.LabelTuple(
            int(rng.integers(0, registry.m)),
            int(rng.integers(0, 13)),
            int(rng.integers(0, 9)),
            int(rng.integers(0, 2)),
            int(rng.integers(0, 2)),
        )
        assert labels.from_one_hot(labels.one_hot(t, registry)) == t


def test_one_hot_out_of_range(registry):
    with pytest.raises(labels.OutOfRange):
        labels.one_hot(labels.LabelTuple(59, 0, 0, 0, 0), registry)
