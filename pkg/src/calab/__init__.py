"""calab: a pool-based active learning laboratory.

Generative mixture models fitted by variational inference, a
component-to-class classifier (CMM), SVMs with RBF and
responsibility-weighted Mahalanobis kernels, self-adapting multi-criteria
query selection, simulated noisy oracles with cost schemes, and the
nonparametric evaluation statistics used to compare active learners.
"""

__version__ = "0.1.0"
