import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.spatial.distance import cdist

from conftest import randomize
from ccnf import metrics
from ccnf.datasets import get_dataset, linear_scm, root
from ccnf.errors import DegenerateVariance, EmptySample, NonBinaryOutput, NonFiniteJacobian
from ccnf.flow import build_model
from ccnf.graph import CausalGraph
from ccnf.scm import ScmSpec, scm_do_sample, scm_sample
from ccnf.training import TrainConfig, split


def brute_mmd(a, b):
    """Reference unbiased MMD^2 with explicit kernel matrices."""
    pooled = np.concatenate([a, b])
    dist = cdist(pooled, pooled)
    sigma = np.median(dist[np.triu_indices(len(pooled), 1)])
    k = lambda x, y: np.exp(-cdist(x, y, "sqeuclidean") / (2 * sigma ** 2))
    n, m = len(a), len(b)
    kxx, kyy = k(a, a), k(b, b)
    return ((kxx.sum() - np.trace(kxx)) / (n * (n - 1)) + (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
            - 2 * k(a, b).mean())


# consistency loss --------------------------------------------------------------

def test_true_scm_is_consistent():
    spec = get_dataset("chain4")
    assert metrics.consistency_loss(spec, scm_sample(spec, 200, 0), spec.graph) < 1e-6


def test_dense_map_scores_by_hand():
    g = get_dataset("chain4").graph
    A = np.eye(4)
    A[1, 0], A[2, 1], A[3, 2] = 5.0, 0.5, -1.0  # on-pattern entries, not penalised
    A[2, 0] = A[3, 0] = A[3, 1] = 0.1  # off-pattern entries
    x = np.random.default_rng(0).normal(size=(50, 4))
    loss = metrics.consistency_loss(lambda z: z @ A.T, x, g)
    assert loss == pytest.approx(math.sqrt(0.03), rel=1e-6)
    assert loss > 0.01


@pytest.mark.parametrize("name", ["chain4", "network", "backdoor", "chain8"])
def test_ccnf_consistency_is_structural(name):
    spec = get_dataset(name)
    model = build_model(spec.graph, (8, 8), 2)
    x = scm_sample(spec, 100, 1)
    model.fit_standardizer(x)
    assert metrics.consistency_loss(model, x, spec.graph) < 1e-5
    randomize(model, scale=0.5, seed=3)
    assert metrics.consistency_loss(model, x, spec.graph) < 1e-5


def test_non_finite_jacobian():
    g = get_dataset("chain4").graph
    with pytest.raises(NonFiniteJacobian), np.errstate(invalid="ignore"):
        metrics.consistency_loss(lambda z: np.log(z - 10.0), np.zeros((3, 4)), g)


# KL ---------------------------------------------------------------------------------

def test_kl_latent_standard_normal():
    x = np.random.default_rng(0).normal(size=(10_000, 3))
    assert metrics.kl_latent(lambda z: z, x) < 0.01


def test_kl_latent_shifted_closed_form():
    z = np.random.default_rng(1).normal(size=(1000, 2))
    z = (z - z.mean(0)) / z.std(0)
    z[:, 0] += 1.0
    assert metrics.kl_latent(lambda v: v, z) == pytest.approx(0.5, abs=1e-12)


def test_kl_latent_guards():
    with pytest.raises(ValueError):
        metrics.kl_latent(lambda z: z, np.zeros((99, 2)))
    with pytest.raises(DegenerateVariance):
        metrics.kl_latent(lambda z: z, np.ones((200, 2)))


@settings(max_examples=300)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.floats(0.01, 10))
def test_gaussian_kl_non_negative(means, var):
    kl = metrics.gaussian_kl(means, [var] * len(means))
    assert kl >= 0
    if all(m == 0 for m in means) and var == 1.0:
        assert kl == 0


class _GaussianStub:
    def __init__(self, var):
        self.var = var

    def log_prob(self, x):
        return stats.norm(0, math.sqrt(self.var)).logpdf(x).sum(axis=1)


def test_kl_data_closed_form():
    spec = ScmSpec("n01", CausalGraph(["a", "b"], [[], []]), [root(0), root(1)])
    n = 200_000
    est = metrics.kl_data(_GaussianStub(2.0), spec, n, 0)
    expected = 2 * 0.5 * (0.5 - 1 + math.log(2))
    # per-sample log-ratio has variance 2 * 1/8 for two independent dimensions
    assert abs(est - expected) < 4 * math.sqrt(0.25 / n)


def test_kl_data_oracle_is_zero():
    spec = get_dataset("nlin-simpson")
    assert metrics.kl_data(spec, spec, 1000, 0) == 0.0


# MMD ----------------------------------------------------------------------------------

def test_mmd_matches_brute_force():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(300, 2)), rng.normal(0.5, 1.0, size=(250, 2))
    assert metrics.mmd_raw(a, b) == pytest.approx(brute_mmd(a, b), rel=1e-9)


def test_mmd_separates_shifted_normals():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(1000, 1)), rng.normal(5.0, 1.0, size=(1000, 1))
    assert metrics.mmd(a, b) > 0.5
    assert metrics.mmd(a, b) == pytest.approx(brute_mmd(a, b), rel=1e-9)


def test_mmd_identical_samples():
    a = np.random.default_rng(4).normal(size=(400, 3))
    assert metrics.mmd_raw(a, a) <= 0
    assert metrics.mmd(a, a) == 0.0


def test_mmd_permutation_invariant_and_symmetric():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(500, 2)), rng.normal(0.2, 1.0, size=(400, 2))
    base = metrics.mmd_raw(a, b)
    assert metrics.mmd_raw(rng.permutation(a), rng.permutation(b)) == base
    assert metrics.mmd_raw(b, a) == base


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(0, 10_000))
def test_mmd_symmetry_property(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 2)), rng.normal(size=(m, 2))
    assert metrics.mmd(a, b) == metrics.mmd(b, a)
    assert metrics.mmd(a, b) >= 0


def test_mmd_bandwidth_subsample_and_errors():
    big = np.random.default_rng(6).normal(size=(metrics.MEDIAN_SAMPLE_CAP + 500, 1))
    # |X - Y| for independent standard normals has median sqrt(2) * Phi^-1(3/4)
    assert metrics.median_bandwidth(big) == pytest.approx(math.sqrt(2) * stats.norm.ppf(0.75), rel=0.02)
    with pytest.raises(EmptySample):
        metrics.mmd(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(EmptySample):
        metrics.mmd(np.zeros((1, 2)), np.zeros((3, 2)))


# grids, interventions, counterfactuals -----------------------------------------------------

def test_default_grid():
    g = get_dataset("nlin-simpson").graph
    assert metrics.default_grid(g) == [(i, v) for i in (0, 1, 2) for v in (-1.0, 0.0, 1.0)]
    g = get_dataset("nlin-triangle").graph
    assert [c[0] for c in metrics.default_grid(g)] == [0, 0, 0, 1, 1, 1]


def test_quantile_grid():
    spec = get_dataset("chain4")
    x = scm_sample(spec, 1001, 0)
    grid = metrics.quantile_grid(spec.graph, x, qs=(0.5,))
    assert grid == [(i, float(np.median(x[:, i]))) for i in range(3)]


def test_oracle_stub_intervention_mmd():
    spec = get_dataset("nlin-simpson")
    worst, table = metrics.max_intervention_mmd(spec, spec, metrics.default_grid(spec.graph), 1000, 0)
    assert worst < 0.01
    assert len(table) == 9 and worst == max(r["mmd"] for r in table)


def test_one_cell_grid_is_plain_mmd():
    spec = get_dataset("chain4")
    worst, _ = metrics.max_intervention_mmd(spec, spec, [(1, 0.5)], 300, 7)
    a = scm_do_sample(spec, 1, 0.5, 300, [7, 0, 0])
    b = scm_do_sample(spec, 1, 0.5, 300, [7, 0, 1])
    assert worst == metrics.mmd(a, b)
    with pytest.raises(ValueError):
        metrics.max_intervention_mmd(spec, spec, [], 10, 0)


def test_rmsd_oracle_stub_and_identity():
    spec = get_dataset("backdoor")
    worst, table = metrics.rmsd_counterfactual(spec, spec, 300, metrics.default_grid(spec.graph), 0)
    assert worst == 0.0 and all(r["rmsd"] == 0.0 for r in table)
    x = np.random.default_rng(0).normal(size=(10, 3))
    assert metrics.rmsd(x, x) == 0.0
    assert metrics.rmsd(np.zeros(4), np.full(4, 2.0)) == 2.0
    with pytest.raises(ValueError):
        metrics.rmsd_counterfactual(spec, spec, 10, [], 0)


def test_trained_chain4_kl(chain4_model):
    spec, model, _ = chain4_model
    assert metrics.kl_data(model, spec, 10_000, 5) < 0.1
    _, _, test = split(scm_sample(spec, 10_000, 0), TrainConfig(seed=0))
    assert metrics.kl_latent(model, test) < 0.05
    assert metrics.consistency_loss(model, test[:500], spec.graph) < 1e-5


# fairness and ATE -------------------------------------------------------------------

def test_fairness_trivial_predictors():
    x = np.random.default_rng(0).normal(size=(100, 3))
    x[:, 0] = np.arange(100) % 2
    ignore = lambda z: (z[:, 1] > 0).astype(int)
    assert metrics.individual_fairness(ignore, x, 0) == {"attribute_flip": 0.0}
    itself = lambda z: z[:, 0].astype(int)
    assert metrics.individual_fairness(itself, x, 0)["attribute_flip"] == 1.0
    with pytest.raises(NonBinaryOutput):
        metrics.individual_fairness(lambda z: z[:, 1], x, 0)


def test_fairness_on_credit_graph_is_exactly_zero():
    spec = get_dataset("synthetic-credit")
    model = randomize(build_model(spec.graph, (8, 8), 2), scale=0.5, seed=1)
    x = scm_sample(spec, 2000, 0)
    model.fit_standardizer(x)
    sex, risk = spec.graph.index("sex"), spec.graph.index("risk")
    predict = metrics.mean_latent_classifier(model, risk, threshold=float(np.median(x[:, risk])))
    rates = metrics.individual_fairness(predict, x, sex, model=model)
    assert rates == {"attribute_flip": 0.0, "counterfactual": 0.0}
    ate, ite = metrics.ate(model, sex, risk, 500, 0)
    assert ate == 0.0 and np.all(ite == 0.0)


def test_ate_linear_oracle():
    spec = linear_scm("ty", ["T", "Y"], {(0, 1): 2.0})
    ate, ite = metrics.ate(spec, 0, 1, 1000, 0)
    assert ate == pytest.approx(2.0, abs=1e-6)
    assert ate == float(ite.mean())


# reporting -------------------------------------------------------------------------

def test_aggregate_and_report():
    mean, dev = metrics.aggregate([1.0, 2.0, 4.0])
    assert mean == pytest.approx(7 / 3) and dev == pytest.approx(4 - 7 / 3)
    assert metrics.aggregate([0.5]) == (0.5, 0.0)
    with pytest.raises(ValueError):
        metrics.aggregate([])
    rep = metrics.MetricsReport(dataset="chain4", model="ccnf", seed=1, kl_latent=0.01,
                                ate={"ate": 0.0})
    row = rep.flat_row()
    assert row == {"dataset": "chain4", "model": "ccnf", "seed": 1, "kl_latent": 0.01, "ate_ate": 0.0}
    assert rep.to_dict()["kl_data"] is None
