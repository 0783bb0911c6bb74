"""Steerable-pyramid V1 front end with a learned V2 texture stage.

Self-supervised covariance-contrastive training, QDA texture classification
and representational similarity analysis.
"""
__version__ = "0.1.0"
