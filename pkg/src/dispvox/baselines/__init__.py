from .cpd import CpdParams, SingularSystemError, cpd_register, posterior
from .nricp import NricpParams, knn_laplacian, nricp_register

__all__ = ["CpdParams", "SingularSystemError", "cpd_register", "posterior",
           "NricpParams", "knn_laplacian", "nricp_register"]
