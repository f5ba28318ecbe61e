"""Feature visualisation for convolutional classifiers of channels x time signals."""

from .dataset import LabeledDataset, load_epd, save_epd
from .engine import ModelSpec, NeuronSelector, Weights, forward, input_gradient, rscnn, toy_cnn
from .fileio import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "LabeledDataset",
    "ModelSpec",
    "NeuronSelector",
    "Weights",
    "forward",
    "input_gradient",
    "load_epd",
    "load_weights",
    "rscnn",
    "save_epd",
    "save_weights",
    "toy_cnn",
]
