"""Strain-smoothed enriched finite elements with a level-set interface.

Solves plane-strain elasticity around misfitting particles whose interface
carries its own (Gurtin-Murdoch type) elasticity, and evolves the particle
shape by the configurational force acting on the interface.
"""

__version__ = "0.1.0"
