"""
CEEI Mechanisms - market-clearing menus and optimal mechanisms without money.

This package solves the competitive equilibrium from equal incomes for a distribution of agent
values, computes the shadow costs of supply, certifies optimality of the CEEI menu among
incentive-compatible mechanisms and finds the optimal symmetric two-good menu.
"""

__version__ = "1.0.0"
__author__ = "CEEI Mechanisms Team"
