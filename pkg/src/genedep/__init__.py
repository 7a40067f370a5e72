"""Probabilistic dependency and structure discovery for expression data.

Modules
-------
stats        log-domain primitives, densities, BIC
dataio       TSV readers/writers and JSON-lines result documents
datagen      seeded synthetic data with planted ground truth
rpa          probe-reliability differential expression
vdp          variational Dirichlet-process Gaussian mixtures
netresponse  network-constrained response discovery
simcca       similarity-constrained probabilistic CCA
assoclust    associative clustering
"""

__version__ = "0.1.0"
