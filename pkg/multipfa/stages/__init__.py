"""
Analyze Pipeline Stages
One node per step of the analyze graph.
"""

from multipfa.stages.loader import load_stage
from multipfa.stages.normalizer import tic_stage
from multipfa.stages.fitter import fit_stage
from multipfa.stages.inference import infer_stage
from multipfa.stages.factor import factor_stage
from multipfa.stages.reporter import report_stage

__all__ = [
    "load_stage",
    "tic_stage",
    "fit_stage",
    "infer_stage",
    "factor_stage",
    "report_stage",
]
