import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numerical_jacobian, randomize
from ccnf.datasets import REGISTRY, get_dataset
from ccnf.errors import InvalidConfig, NonFiniteValue, VersionMismatch
from ccnf.flow import (
    CcnfModel,
    MaskedConditioner,
    PartialCausalLayer,
    build_model,
    soft_clamp,
    soft_clamp_grad,
)
from ccnf.graph import CausalGraph, ancestors, topological_batching

LOG_N0 = -0.5 * math.log(2 * math.pi)


# soft clamp ------------------------------------------------------------------

def test_soft_clamp_values():
    assert soft_clamp(0.0, 3.0) == 0.0
    assert soft_clamp(3.0, 3.0) == 1.5
    assert soft_clamp_grad(0.0, 3.0) == 1.0
    with pytest.raises(InvalidConfig):
        soft_clamp(1.0, 0.0)


@settings(max_examples=1000)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0.1, 10))
def test_soft_clamp_odd_monotone_bounded(a, b, slope):
    assert soft_clamp(-a, slope) == -soft_clamp(a, slope)
    assert abs(soft_clamp(a, slope)) < slope
    if a < b:
        assert soft_clamp(a, slope) <= soft_clamp(b, slope)


def test_soft_clamp_grad_matches_differences():
    x = np.linspace(-20, 20, 401)
    h = 1e-6
    fd = (soft_clamp(x + h) - soft_clamp(x - h)) / (2 * h)
    mask = np.abs(x) > 1e-3  # kink of |x| at the origin
    np.testing.assert_allclose(soft_clamp_grad(x)[mask], fd[mask], rtol=1e-6)


# construction ------------------------------------------------------------------

def test_collider_chain_layer_sequence(collider_chain):
    model = build_model(collider_chain, (8, 8), 2)
    assert [layer.labels for layer in model.layers] == [(0, 1), (0, 1), (2,), (2,), (3,), (3,)]
    assert model.layer_batch == [0, 0, 1, 1, 2, 2]


def test_chain8_has_at_least_eight_layers():
    model = build_model(get_dataset("chain8").graph, (8, 8), 1)
    assert len(model.layers) >= 8


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_layer_count_covers_batches(name):
    g = get_dataset(name).graph
    model = build_model(g, (8, 8), 1)
    assert len(model.layers) >= len(topological_batching(g))
    assert sorted(set(model.layer_batch)) == list(range(len(model.batches)))
    assert model.layer_batch == sorted(model.layer_batch)


@pytest.mark.parametrize("kwargs", [
    {"hidden": (10, 10)},
    {"hidden": (8,)},
    {"layers_per_batch": 0},
    {"layers_per_batch": 6},
    {"layers_per_batch": [2, 2]},
    {"slope": 0.0},
])
def test_invalid_config(collider_chain, kwargs):
    with pytest.raises(InvalidConfig):
        build_model(collider_chain, **kwargs)


def test_per_batch_layer_counts(collider_chain):
    model = build_model(collider_chain, (8, 8), [1, 3, 2])
    assert [len(model.batch_layers(j)) for j in range(3)] == [1, 3, 2]


def test_mask_connectivity_respects_parents():
    g = get_dataset("backdoor").graph
    for targets in topological_batching(g):
        cond = MaskedConditioner(g, targets, (16, 16), 0)
        path = cond.masks[0]
        for m in cond.masks[1:len(cond.hidden) + 1]:
            path = path @ m
        path = path + cond.masks[-1]
        n = len(targets)
        for k, i in enumerate(targets):
            outside = [j for j in range(g.d) if j not in g.parents[i]]
            assert np.all(path[outside, k] == 0)
            assert np.all(path[outside, n + k] == 0)


def test_root_parameters_are_unconditional():
    g = get_dataset("nlin-simpson").graph
    model = randomize(build_model(g, (8, 8), 1), seed=1)
    layer = model.layers[0]
    z = np.random.default_rng(0).normal(size=(5, g.d))
    s, t = layer.scale_shift(z)
    assert np.all(s == s[0]) and np.all(t == t[0])
    assert np.any(s != 0)


# identity initialisation ----------------------------------------------------------

def test_fresh_model_is_destandardization(collider_chain):
    model = build_model(collider_chain, (16, 16), 2)
    rng = np.random.default_rng(0)
    model.fit_standardizer(rng.normal(3.0, 2.0, size=(500, 4)))
    u = rng.normal(size=(200, 4))
    assert np.array_equal(model.forward(u), model.destandardize(u))


def test_fresh_log_prob_at_origin(collider_chain):
    model = build_model(collider_chain, (8, 8), 2)
    assert model.log_prob(np.zeros(4)) == pytest.approx(4 * LOG_N0, abs=1e-15)


# structural properties ----------------------------------------------------------

@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_non_ancestor_latents_do_not_move_outputs(name):
    g = get_dataset(name).graph
    model = randomize(build_model(g, (8, 8), 2), seed=2)
    rng = np.random.default_rng(3)
    u = rng.normal(size=(64, g.d))
    x = model.forward(u)
    for i in range(g.d):
        others = [j for j in range(g.d) if j != i and j not in ancestors(g, i)]
        if not others:
            continue
        v = u.copy()
        v[:, others] = rng.normal(size=(64, len(others))) * 5
        assert model.forward(v)[:, i].tobytes() == x[:, i].tobytes()


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_layer_identity_branch(name):
    g = get_dataset(name).graph
    model = randomize(build_model(g, (8, 8), 2), seed=4)
    z = np.random.default_rng(5).normal(size=(100, g.d))
    for layer in model.layers:
        rest = [j for j in range(g.d) if j not in layer.labels]
        assert np.array_equal(layer.forward(z)[:, rest], z[:, rest])
        assert np.array_equal(layer.inverse(z)[0][:, rest], z[:, rest])


def test_layer_invertible_and_scale_bounded():
    g = get_dataset("network").graph
    rng = np.random.default_rng(6)
    layer = PartialCausalLayer(g, (3, 4), (16, 16), 3.0, rng)
    for p, m in zip(layer.params(), layer.param_masks()):
        p[...] = rng.normal(0, 3.0, p.shape) * m  # large weights to hit the clamp
    z = rng.normal(size=(1000, g.d)) * 3
    back, _ = layer.inverse(layer.forward(z))
    np.testing.assert_allclose(back, z, atol=1e-9, rtol=0)
    s, _ = layer.scale_shift(z)
    assert np.all(np.abs(s) < 3.0)


def test_stacked_layers_keep_sparsity():
    g = get_dataset("backdoor").graph
    rng = np.random.default_rng(7)
    for batch in topological_batching(g):
        layers = [PartialCausalLayer(g, batch, (8, 8), 3.0, rng) for _ in range(2)]
        for layer in layers:
            for p, m in zip(layer.params(), layer.param_masks()):
                p[...] = rng.normal(0, 0.5, p.shape) * m

        def fn(z):
            z = z[None, :]
            for layer in layers:
                z = layer.forward(z)
            return z[0]

        allowed = np.eye(g.d, dtype=bool) | g.adjacency().astype(bool)
        for _ in range(5):
            J = numerical_jacobian(fn, rng.normal(size=g.d))
            assert np.all(J[~allowed] == 0.0)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_forward_inverse_roundtrip(name):
    spec = get_dataset(name)
    from ccnf.scm import scm_sample

    model = randomize(build_model(spec.graph, (16, 16), 2), seed=8)
    model.fit_standardizer(scm_sample(spec, 1000, 0))
    u = np.random.default_rng(9).normal(size=(1000, spec.d))
    np.testing.assert_allclose(model.inverse(model.forward(u)), u, atol=1e-7, rtol=0)
    x = model.forward(u)
    np.testing.assert_allclose(model.forward(model.inverse(x)), x, atol=1e-7, rtol=1e-12)


def test_inverse_jacobian_sparsity():
    g = get_dataset("network").graph
    model = randomize(build_model(g, (8, 8), 2), seed=10)
    allowed = np.eye(g.d, dtype=bool) | g.adjacency().astype(bool)
    rng = np.random.default_rng(11)
    for _ in range(10):
        J = numerical_jacobian(model.inverse, rng.normal(size=g.d))
        assert np.all(J[~allowed] == 0.0)


def test_forward_jacobian_diagonal_positive():
    g = get_dataset("m-graph").graph
    model = randomize(build_model(g, (8, 8), 3), scale=0.6, seed=12)
    rng = np.random.default_rng(13)
    for _ in range(20):
        J = numerical_jacobian(model.forward, rng.normal(size=g.d))
        assert np.all(np.diag(J) > 0)


@pytest.mark.parametrize("name", ["nlin-triangle", "chain4"])
def test_log_det_matches_numerical_jacobian(name):
    spec = get_dataset(name)
    model = randomize(build_model(spec.graph, (8, 8), 2), scale=0.5, seed=14)
    model.fit_standardizer(np.random.default_rng(0).normal(1.0, 2.0, size=(300, spec.d)))
    rng = np.random.default_rng(15)
    for _ in range(20):
        x = rng.normal(1.0, 2.0, size=spec.d)
        u = model.inverse(x)
        logdet = model.log_prob(x) - (-0.5 * u @ u + spec.d * LOG_N0)
        expected = np.linalg.slogdet(numerical_jacobian(model.inverse, x))[1]
        assert logdet == pytest.approx(expected, rel=1e-4, abs=1e-8)


def test_density_integrates_to_one():
    g = CausalGraph.from_edges(["a", "b"], [("a", "b")])
    model = randomize(build_model(g, (8, 8), 2), scale=0.4, seed=16)
    model.fit_standardizer(np.random.default_rng(0).normal(0.5, 1.5, size=(500, 2)))
    grid = np.linspace(-25, 25, 1001)
    A, B = np.meshgrid(grid, grid, indexing="ij")
    p = np.exp(model.log_prob(np.column_stack([A.ravel(), B.ravel()]))).reshape(A.shape)
    mass = np.trapezoid(np.trapezoid(p, grid, axis=1), grid)
    assert mass == pytest.approx(1.0, rel=0.01)


def test_non_finite_input_rejected(collider_chain):
    model = build_model(collider_chain, (8, 8), 1)
    with pytest.raises(NonFiniteValue):
        model.forward([0.0, np.nan, 0.0, 0.0])
    with pytest.raises(NonFiniteValue):
        model.log_prob([0.0, np.inf, 0.0, 0.0])


# serialization ------------------------------------------------------------------

def test_save_load_bit_exact(tmp_path):
    spec = get_dataset("backdoor")
    model = randomize(build_model(spec.graph, (16, 16), [1, 2, 3, 2, 1]), seed=17)
    model.fit_standardizer(np.random.default_rng(1).normal(size=(100, spec.d)) * 3 + 1)
    path = tmp_path / "run" / "best.model"
    model.save(path)
    loaded = CcnfModel.load(path)
    probe = np.random.default_rng(2).normal(size=(50, spec.d))
    assert loaded.log_prob(probe).tobytes() == model.log_prob(probe).tobytes()
    assert loaded.layers_per_batch == model.layers_per_batch
    loaded.save(tmp_path / "again.model")
    assert (tmp_path / "again.model").read_bytes() == path.read_bytes()


def test_load_rejects_other_version(tmp_path, collider_chain):
    doc = build_model(collider_chain, (8, 8), 1).to_document()
    doc["version"] = "ccnf-model/0"
    with pytest.raises(VersionMismatch):
        CcnfModel.from_document(doc)
    doc = build_model(collider_chain, (8, 8), 1).to_document()
    doc["layers"][0]["params"][0]["shape"] = [1, 1]
    doc["layers"][0]["params"][0]["data"] = [0.0]
    with pytest.raises(VersionMismatch):
        CcnfModel.from_document(json.loads(json.dumps(doc)))


# random graphs ----------------------------------------------------------------

@st.composite
def small_dags(draw):
    n = draw(st.integers(1, 6))
    order = draw(st.permutations(list(range(n))))
    pairs = [(order[a], order[b]) for a in range(n) for b in range(a + 1, n)]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return CausalGraph.from_edges([f"v{i}" for i in range(n)], [e for e, k in zip(pairs, keep) if k])


@settings(max_examples=40, deadline=None)
@given(small_dags(), st.integers(0, 2 ** 31 - 1), st.integers(1, 3))
def test_random_graph_roundtrip_and_locality(g, seed, k):
    model = randomize(build_model(g, (8, 8), k, seed=seed), seed=seed)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(20, g.d))
    x = model.forward(u)
    np.testing.assert_allclose(model.inverse(x), u, atol=1e-7, rtol=0)
    for i in range(g.d):
        others = [j for j in range(g.d) if j != i and j not in ancestors(g, i)]
        v = u.copy()
        v[:, others] += 1.0
        assert np.array_equal(model.forward(v)[:, i], x[:, i])
