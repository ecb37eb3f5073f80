"""Walkthrough: fit a flow on the linear chain, then query it.

Run with ``python3 notebooks/chain4_walkthrough.py``. Takes about a minute.
"""
import numpy as np

from ccnf import Intervention, TrainConfig, build_model, counterfactual, interventions_sample, train
from ccnf import metrics
from ccnf.datasets import get_dataset
from ccnf.scm import scm_counterfactual, scm_do_sample, scm_sample

spec = get_dataset("chain4")
data = scm_sample(spec, 10_000, 0)
print("graph parents:", {spec.graph.names[i]: [spec.graph.names[p] for p in ps]
                         for i, ps in enumerate(spec.graph.parents)})

# %% Training
model, report = train(build_model(spec.graph, (32, 32), 2, seed=0), data, TrainConfig(max_epochs=300))
print(f"best epoch {report.best_epoch}, test NLL {report.test_nll:.3f}")
print("layers per batch:", [model.layer_batch.count(b) for b in range(len(model.batches))])

# %% The induced graph matches the true one, so the masked Jacobian penalty is zero
print("consistency loss:", metrics.consistency_loss(model, data[:500], spec.graph))

# %% Interventions: compare Do(X1 = 1) with the simulator
x_model = interventions_sample(model, Intervention("X1", 1.0), 5000, 1)
x_true = scm_do_sample(spec, 1, 1.0, 5000, 2)
print("E[X | do(X1=1)] model:", np.round(x_model.mean(0), 3))
print("E[X | do(X1=1)] truth:", np.round(x_true.mean(0), 3))

# %% Counterfactuals for a handful of observed rows
factual = data[:5]
print("factual:\n", np.round(factual, 3))
print("model counterfactual, X1 := 0:\n", np.round(counterfactual(model, factual, Intervention(1, 0.0)), 3))
print("true counterfactual, X1 := 0:\n", np.round(scm_counterfactual(spec, factual, 1, 0.0), 3))
