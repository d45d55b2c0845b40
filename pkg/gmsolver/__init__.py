"""
GM Solver
Neumann solver and verification suite for the sign-coupled
activator-inhibitor system
"""

__version__ = "1.0.0"
