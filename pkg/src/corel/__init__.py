"""Attractive-repulsive loss laboratory.

Small feed-forward classifiers trained under CCE, center loss, Cosine-COREL
and Gaussian-COREL, plus a clustering suite that scores how naturally the
learned latent spaces cluster.
"""

__version__ = "0.1.0"
