"""Core-temperature estimation for cylindrical Li-ion cells.

Physics models (equivalent circuit, polynomial-approximation and
finite-volume thermal models) generate training data for an LSTM
estimator, which is then adapted to a mismatched "real" cell.
"""

__version__ = "0.1.0"
