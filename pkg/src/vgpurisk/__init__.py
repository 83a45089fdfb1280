"""Aggregate catastrophe-risk analysis on (virtual) GPU deployments.

Reference computation of Year Loss Tables from a Year Event Table, Event Loss
Tables and a layered portfolio, plus a multi-tenant deployment simulator, the
closed-form time/energy model it is checked against, and a (P, v) planner.
"""

from .datagen import DatasetBundle, GenSpec, generate, read_bundle, write_bundle
from .engine import ExecutionPlan, analyse, pml, run_analysis, tvar
from .model import ModelParams, exec_time_multitenancy, predict, preset
from .planner import PlanQuery, plan
from .risk import (
    EventLossTable,
    Layer,
    LayerTerms,
    PerEltTerms,
    Portfolio,
    Trial,
    YearEventTable,
    YearLossTable,
    trial_loss,
)
from .sim import LinkModel, SimScenario, simulate

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle",
    "EventLossTable",
    "ExecutionPlan",
    "GenSpec",
    "Layer",
    "LayerTerms",
    "LinkModel",
    "ModelParams",
    "PerEltTerms",
    "PlanQuery",
    "Portfolio",
    "SimScenario",
    "Trial",
    "YearEventTable",
    "YearLossTable",
    "analyse",
    "exec_time_multitenancy",
    "generate",
    "plan",
    "pml",
    "predict",
    "preset",
    "read_bundle",
    "run_analysis",
    "simulate",
    "trial_loss",
    "tvar",
]
