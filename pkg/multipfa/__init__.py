"""
Multi-PFA: false discovery proportion estimation for multinomial feature
screening under arbitrary dependence.
"""

__version__ = "1.0.0"
