# backend/config.py
import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    """Base configuration for the pipeline scheduler, read from the environment"""

    # Solver backend
    SOLVER_BACKEND = os.getenv('PIPESCHED_BACKEND', 'highs')
    SOLVER_PATH = os.getenv('PIPESCHED_SOLVER') or None
    SOLVER_TIME_LIMIT = float(os.getenv('PIPESCHED_TIME_LIMIT', '300'))
    SOLVER_MIP_GAP = float(os.getenv('PIPESCHED_MIP_GAP', '1e-6'))
    SOLVER_THREADS = int(os.getenv('PIPESCHED_THREADS', '1'))

    # Logging
    LOG_LEVEL = os.getenv('PIPESCHED_LOG_LEVEL', 'INFO').upper()

    # Numerical tolerances
    INTEGRALITY_TOL = 1e-5
    FEASIBILITY_TOL = 1e-5
    SCENARIO_VOLUME_TOL = 1e-6   # times PV
    VERIFIER_VOLUME_TOL = 1e-4   # times PV
    VERIFIER_TIME_TOL = 1e-3     # hours

    # Makespan tie-break weight, relative to the smallest positive cost coefficient
    TIE_BREAK_FACTOR = 1e-4
