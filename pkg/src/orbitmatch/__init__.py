"""Longest common substrings and shortest distances between orbits.

The main entry points live in the submodules: :mod:`.matching` (``M_n``),
:mod:`.mindist` (``m_n``), :mod:`.estimators` (correlation dimension,
slope fits), :mod:`.orbits` (map simulation), :mod:`.processes`
(stochastic sources and exact entropies), :mod:`.rotation` (continued
fractions) and :mod:`.harness` (CLI and experiment runner).
"""

__version__ = "0.1.0"
