"""
utils_config.py - getter functions for mixline settings.

Every tunable is read from the environment (a .env file is loaded first)
and falls back to a default. The hub CLI and the producer use these
getters for their flag defaults.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import os
import pathlib
from typing import Optional

# Import external packages
from dotenv import load_dotenv

# Import functions from local modules
from utils.utils_logger import logger

#####################################
# Load Environment Variables
#####################################

load_dotenv()

#####################################
# Default Configurations
#####################################

# The 23 levels requested by the COVID-19 Forecast Hub: a median and 11 central intervals.
DEFAULT_HUB_QUANTILE_LEVELS: tuple[float, ...] = (
    0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5,
    0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.975, 0.99,
)

PROJECT_ROOT = pathlib.Path(__file__).parent.parent

#####################################
# Helper Functions
#####################################


def parse_levels(text: str) -> tuple[float, ...]:
    """Parse a comma-separated list of quantile levels."""
    levels = tuple(float(part) for part in text.split(",") if part.strip())
    if not levels:
        raise ValueError("no quantile levels given")
    return levels


#####################################
# Getter Functions for .env Variables
#####################################


def get_hub_quantile_levels() -> tuple[float, ...]:
    """Fetch the quantile levels used for is/wis scoring of mixtures."""
    raw = os.getenv("MIXLINE_HUB_LEVELS")
    levels = parse_levels(raw) if raw else DEFAULT_HUB_QUANTILE_LEVELS
    logger.info(f"Hub quantile levels: {len(levels)} levels")
    return levels


def get_interval_alpha() -> float:
    """Fetch the alpha of the central interval used by the 'is' rule."""
    alpha = float(os.getenv("MIXLINE_INTERVAL_ALPHA", 0.05))
    logger.info(f"Interval score alpha: {alpha}")
    return alpha


def get_random_seed() -> int:
    """Fetch the seed used wherever sampling occurs."""
    seed = int(os.getenv("MIXLINE_SEED", 0))
    logger.info(f"Random seed: {seed}")
    return seed


def get_worker_count() -> int:
    """Fetch the number of parallel workers for per-key work."""
    workers = int(os.getenv("MIXLINE_WORKERS", 1))
    logger.info(f"Worker count: {workers}")
    return workers


def get_fit_components() -> int:
    """Fetch the default number of normal components for fits."""
    components = int(os.getenv("MIXLINE_FIT_COMPONENTS", 1))
    logger.info(f"Fit components: {components}")
    return components


def get_fit_rel_tol() -> float:
    """Fetch the relative objective change that stops a fit."""
    rel_tol = float(os.getenv("MIXLINE_FIT_REL_TOL", 0.001))
    logger.info(f"Fit relative tolerance: {rel_tol}")
    return rel_tol


def get_fit_max_outer_iter() -> int:
    """Fetch the outer iteration budget for coordinate-descent fits."""
    max_iter = int(os.getenv("MIXLINE_FIT_MAX_OUTER_ITER", 500))
    logger.info(f"Fit max outer iterations: {max_iter}")
    return max_iter


def get_max_components() -> Optional[int]:
    """Fetch the per-forecast component limit (unset means unlimited)."""
    raw = os.getenv("MIXLINE_MAX_COMPONENTS")
    limit = int(raw) if raw else None
    logger.info(f"Max components per forecast: {limit if limit else 'unlimited'}")
    return limit


def get_grid_points() -> int:
    """Fetch the default number of grid points for plot-ready output."""
    points = int(os.getenv("MIXLINE_GRID_POINTS", 200))
    logger.info(f"Grid points: {points}")
    return points


def get_data_folder() -> pathlib.Path:
    """Fetch the folder where the producer writes submission files."""
    folder = pathlib.Path(os.getenv("MIXLINE_DATA_FOLDER", PROJECT_ROOT.joinpath("data")))
    logger.info(f"Data folder: {folder}")
    return folder
