# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

"""
coreason-slipguard
"""

__version__ = "0.1.0"
__author__ = "Gowtham A Rao"
__email__ = "gowtham.rao@coreason.ai"

from .controllers import ModelBundle, RecedingHorizonController, run_closed_loop
from .dataset import DatasetBuilder, DatasetLoader, gen_dataset
from .grasp_sim import GraspSimulator
from .optimizer import OptProblem, solve
from .pipeline import SlipPipeline, closed_loop_trial, run_sweep

__all__ = [
    "DatasetBuilder",
    "DatasetLoader",
    "GraspSimulator",
    "ModelBundle",
    "OptProblem",
    "RecedingHorizonController",
    "SlipPipeline",
    "closed_loop_trial",
    "gen_dataset",
    "run_closed_loop",
    "run_sweep",
    "solve",
]
