"""Online feature selection with diversity: DPP sampling over a feature stream,
local redundancy and separability criteria, and elasticnet pruning."""

__version__ = "0.1"
