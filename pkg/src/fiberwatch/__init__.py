"""fiberwatch: synthetic OTDR traces, recurrent-autoencoder anomaly detection,
and attention-BiGRU fault diagnosis and localization."""

__version__ = "0.1.0"

from . import anomaly, baselines, dataset, diagnoser, evaluation, generator, nn, tracesim

__all__ = [
    "anomaly",
    "baselines",
    "dataset",
    "diagnoser",
    "evaluation",
    "generator",
    "nn",
    "tracesim",
    "__version__",
]
