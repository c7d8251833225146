"""Graph recurrent neural networks with time/node/edge gating, built on a
small numpy autodiff tape, plus generators for synthetic graph processes and
a harness that measures permutation equivariance and perturbation stability
against their theoretical bounds."""

__version__ = "0.1.0"
