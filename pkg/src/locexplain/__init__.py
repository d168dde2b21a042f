"""Local model-agnostic explanations by importance-weighted local regression
(VarImp) and supervised clustering of local coefficients (SupClus)."""

__version__ = "0.1.0"
