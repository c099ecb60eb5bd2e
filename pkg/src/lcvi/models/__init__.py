from .base import Batch, ModelSpec, Target, sample_predictive
from .eight_schools import EightSchoolsData, EightSchoolsModel, load_eight_schools
from .pmf import MatrixData, PmfModel, generate_synthetic_matrix

__all__ = [
    "Batch",
    "ModelSpec",
    "Target",
    "sample_predictive",
    "EightSchoolsData",
    "EightSchoolsModel",
    "load_eight_schools",
    "MatrixData",
    "PmfModel",
    "generate_synthetic_matrix",
]
