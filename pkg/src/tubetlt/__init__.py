"""Robust STL satisfiability checks and online synthesis on grid tubes."""

from .errors import *  # noqa: F401,F403
from .formula import evaluate, evaluate_realtime, parse, to_pnf
from .gridset import Grid, GridSet
from .predicates import ball, box, halfspace
from .reach import Tube, TubeCache, max_reach_tube, min_reach_tube
from .synth import RunResult, run_online
from .system import DisturbanceSource, integrator_model, linear_model
from .ttlt import Ttlt, chain_form, construct, tree_satisfies

__version__ = "0.1.0"
