"""Fairness on the synthetic credit SCM.

The sensitive attribute ``sex`` is not an ancestor of ``risk``, so a classifier
built from the flow's mean-latent prediction of ``risk`` cannot depend on it.
"""
import numpy as np

from ccnf import TrainConfig, build_model, train
from ccnf import metrics
from ccnf.datasets import get_dataset
from ccnf.graph import ancestors
from ccnf.scm import scm_sample

spec = get_dataset("synthetic-credit")
g = spec.graph
sex, risk = g.index("sex"), g.index("risk")
print("ancestors of risk:", sorted(g.names[i] for i in ancestors(g, risk)))

x = scm_sample(spec, 4000, 0)
print("binary columns:", np.unique(x[:, sex]), np.unique(x[:, risk]))

# discrete columns get a little Gaussian noise during training
model, report = train(build_model(g, (16, 16), 2, seed=0), x,
                      TrainConfig(max_epochs=50, patience=10, dequantize=(sex, risk)))
print(f"test NLL {report.test_nll:.3f}")

predict = metrics.mean_latent_classifier(model, risk, threshold=float(np.median(x[:, risk])))
print("flip rates:", metrics.individual_fairness(predict, x, sex, model=model))
ate, ite = metrics.ate(model, sex, risk, 2000, 0)
print("ATE of sex on risk:", ate, " max |ITE|:", float(np.abs(ite).max()))
