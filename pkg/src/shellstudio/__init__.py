"""Generative design toolkit for funicular shells.

Submodules
----------
grid      level-set heightfields, masked normalization, work decomposition
mesh      triangulated surfaces and STL/OBJ exchange
formfind  force-density form finding and corner trimming
fea       thin-shell finite-element oracle
dataset   sample records, manifests, and the generation pipeline
surrogate physics-informed parallel-UNet field predictor
gan       auxiliary-discriminator DCGAN over heightfields
evaluate  RRMSE metrics, reports, manifold embedding, FE round-trip
service   HTTP API for generation and analysis
cli       command-line entry point
"""

__version__ = "0.1.0"
