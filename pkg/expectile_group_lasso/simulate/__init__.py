from expectile_group_lasso.simulate.base import BaseStructure

from expectile_group_lasso.simulate.engine import (
    EstimatorConfig, SimulationReport, SweepTable, gamma_sweep, generate, run, signal_sweep)
from expectile_group_lasso.simulate.errors import BUILTIN_ERRORS
from expectile_group_lasso.simulate.scenario import BUILTIN_STRUCTURES, ScenarioError, ScenarioSpec, load_scenarios


__all__ = (
    'BUILTIN_ERRORS',
    'BUILTIN_STRUCTURES',
    'BaseStructure',
    'EstimatorConfig',
    'ScenarioError',
    'ScenarioSpec',
    'SimulationReport',
    'SweepTable',
    'gamma_sweep',
    'generate',
    'load_scenarios',
    'run',
    'signal_sweep',
)
