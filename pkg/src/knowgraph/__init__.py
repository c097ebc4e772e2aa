"""knowgraph: graph anomaly detection with learned first-order rule fusion.

The package trains simple graph models on temporal authentication snapshots
and combines their probabilistic outputs with expert rules in a Markov logic
network, learned end to end with variational EM and pseudo-likelihood weight
updates.  See README.md for the pipeline walkthrough.
"""

__version__ = "0.1.0"
