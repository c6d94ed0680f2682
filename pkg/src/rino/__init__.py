"""Resolution-independent operator learning on point-cloud data.

Input functions sampled at arbitrary points are embedded by ridge
projection onto a learned dictionary of coordinate-network basis
functions; a DeepONet maps the embeddings to output functions.

Modules
-------
numerics     linear solves, SVD, seeded random streams, Adam
inr          SIREN / MLP coordinate networks with manual backprop
dictionary   atoms, projection, and the two dictionary learners
operator     DeepONet model, training loops, POD modes
datagen      random fields, PDE solvers, subsampling, masks
baselines    gappy POD and predefined basis sets
experiments  configured pipelines behind the command line
"""

from .dictionary import (
    BasisFunction,
    Dictionary,
    DictLearnConfig,
    Embedding,
    PointCloudSignal,
    learn_dictionary_batch,
    learn_dictionary_samplewise,
    project,
    reconstruct,
)
from .inr import MlpParams, MlpSpec
from .numerics import RngState
from .operator import DeepOnetModel, OperatorSample, TrainConfig, Trunk, predict, relative_mse

__version__ = "0.1.0"

__all__ = [
    "BasisFunction",
    "Dictionary",
    "DictLearnConfig",
    "Embedding",
    "PointCloudSignal",
    "learn_dictionary_batch",
    "learn_dictionary_samplewise",
    "project",
    "reconstruct",
    "MlpParams",
    "MlpSpec",
    "RngState",
    "DeepOnetModel",
    "OperatorSample",
    "TrainConfig",
    "Trunk",
    "predict",
    "relative_mse",
]
