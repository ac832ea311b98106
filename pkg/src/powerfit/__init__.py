"""Data-free power-function quantization of small feed-forward networks."""

from .errors import (
    DataError,
    DimensionError,
    DomainError,
    NumericError,
    ParseError,
    PowerFitError,
    RangeError,
    SolverError,
    StructureError,
    TrainingError,
    ValidationError,
)
from .fit import FitReport, fit_exponent, fit_per_layer, grid_scan, nelder_mead_1d, objective
from .fixtures import Dataset, accuracy, generate_dataset, train_fixture
from .inference import ActRangePolicy, QuantizedModel, forward_quantized, quantize_model
from .model import BatchNorm, Conv2d, Dense, Model, fold_batchnorm, forward_float
from .quant import PER_CHANNEL, PER_TENSOR, Granularity, QuantizedTensor, Scheme, dequantize_tensor, quantize_tensor, reconstruction_error

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DimensionError",
    "DomainError",
    "NumericError",
    "ParseError",
    "PowerFitError",
    "RangeError",
    "SolverError",
    "StructureError",
    "TrainingError",
    "ValidationError",
    "FitReport",
    "fit_exponent",
    "fit_per_layer",
    "grid_scan",
    "nelder_mead_1d",
    "objective",
    "Dataset",
    "accuracy",
    "generate_dataset",
    "train_fixture",
    "ActRangePolicy",
    "QuantizedModel",
    "forward_quantized",
    "quantize_model",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "Model",
    "fold_batchnorm",
    "forward_float",
    "PER_CHANNEL",
    "PER_TENSOR",
    "Granularity",
    "QuantizedTensor",
    "Scheme",
    "dequantize_tensor",
    "quantize_tensor",
    "reconstruction_error",
]
