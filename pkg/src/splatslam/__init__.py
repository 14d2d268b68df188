"""Monocular Gaussian-splatting SLAM toolkit.

Patch-graph visual odometry with pluggable correspondence providers, a 3D
Gaussian scene map with photometric refinement, render-guided patch
sampling, embedding-based loop closure with text-to-trajectory querying,
and subgraph-partitioned global optimization.
"""

from . import backend, errors, evaluation, frontend, gaussianmap, geometry, loopclosure, sampler
from .pipeline import Pipeline, PipelineConfig

__version__ = "0.1.0"
