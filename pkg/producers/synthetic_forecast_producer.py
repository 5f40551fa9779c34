"""
synthetic_forecast_producer.py

Write a reproducible set of hub files for trying out the CLI:
several mixture submissions, the bin and quantile views of the first
model, and a truth file drawn from a known "true" mixture.

Every key is (location, target, unit). Given the same seed the files
are byte-identical from run to run.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import os
import pathlib
import sys

# Import external packages
import numpy as np
from dotenv import load_dotenv

# Import functions from local modules
from mixline.distributions import Component, Family, Mixture
from mixline.errors import MixlineError
from mixline.formats import (
    ForecastKey,
    SubmissionKind,
    SubmissionTable,
    TruthTable,
    serialize_submission,
    serialize_truth,
)
from mixline.representations import discretize, quantiles_of
from utils.utils_config import get_data_folder, get_hub_quantile_levels, get_random_seed
from utils.utils_logger import logger

#####################################
# Load Environment Variables
#####################################

load_dotenv()

#####################################
# Define Constants
#####################################

LOCATIONS = ("US", "CA", "NY", "TX")
TARGETS = ("1 wk ahead", "2 wk ahead")
UNIT = "cases"

# Hub-style bins: width 0.5 from -10 to 40.
BIN_EDGES = tuple(np.round(np.arange(-10.0, 40.0 + 0.25, 0.5), 10))

# Mass of a component allowed to fall outside BIN_EDGES.
BIN_MASS_TOL = 1e-6

# Keeps every model's first-mode mean above zero (the lowest truth centre is 6).
MAX_BIAS = 3.0

#####################################
# Getter Functions for .env Variables
#####################################


def get_model_count() -> int:
    """Fetch how many synthetic models to write."""
    count = int(os.getenv("MIXLINE_SYNTHETIC_MODELS", 3))
    logger.info(f"Synthetic models: {count}")
    return count


#####################################
# Forecast Generators
#####################################


def forecast_keys() -> list[ForecastKey]:
    return [ForecastKey(location, target, UNIT) for location in LOCATIONS for target in TARGETS]


def true_mixture(key: ForecastKey) -> Mixture:
    """The bimodal mixture the truth for a key is drawn from."""
    center = 6.0 + 1.5 * LOCATIONS.index(key.location)
    horizon = 1 + TARGETS.index(key.target)
    spread = 1.0 + 0.25 * horizon
    return Mixture((
        Component(Family.NORM, center, spread, weight=0.6),
        Component(Family.NORM, center + 2.5 * horizon, 1.5 * spread, weight=0.4),
    ))


def model_mixture(key: ForecastKey, model: int, rng: np.random.Generator) -> Mixture:
    """A model's forecast: a noisy view of the truth, one family per model."""
    truth = true_mixture(key)
    first, second = truth.components
    bias = float(np.clip(rng.normal(0.0, 0.5 * model), -MAX_BIAS, MAX_BIAS))
    scale = float(np.exp(rng.normal(0.0, 0.2)))
    if model % 2 == 1:
        # Log-normal head matched to the first component's mean and variance.
        mean = first.param1 + bias
        sdlog = float(np.sqrt(np.log1p((first.param2 * scale / mean) ** 2)))
        meanlog = float(np.log(mean) - 0.5 * sdlog ** 2)
        head = Component(Family.LNORM, meanlog, sdlog, weight=0.5)
    else:
        head = Component(Family.NORM, first.param1 + bias, first.param2 * scale, weight=0.5)
    tail = Component(Family.NORM, second.param1 + bias, second.param2 * scale, weight=0.5)
    return Mixture((head, tail))


def generate_mixture_tables(count: int, seed: int) -> list[SubmissionTable]:
    rng = np.random.default_rng(seed)
    keys = forecast_keys()
    tables = []
    for model in range(count):
        entries = {key: model_mixture(key, model, rng) for key in keys}
        tables.append(SubmissionTable(SubmissionKind.MIXTURE, entries))
    return tables


def generate_bin_table(table: SubmissionTable) -> SubmissionTable:
    entries = {key: discretize(m, BIN_EDGES, mass_tol=BIN_MASS_TOL) for key, m in table.entries.items()}
    return SubmissionTable(SubmissionKind.BIN, entries)


def generate_quantile_table(table: SubmissionTable, levels) -> SubmissionTable:
    entries = {key: quantiles_of(m, levels) for key, m in table.entries.items()}
    return SubmissionTable(SubmissionKind.QUANTILE, entries)


def generate_truth_table(seed: int) -> TruthTable:
    values = {}
    for index, key in enumerate(forecast_keys()):
        draw = true_mixture(key).sample(1, seed + index)[0]
        values[key] = float(np.round(draw, 3))
    return TruthTable(values)


def write_all(folder: pathlib.Path, count: int, seed: int, levels) -> list[pathlib.Path]:
    """Write every synthetic file into folder and return their paths."""
    folder.mkdir(parents=True, exist_ok=True)
    written = []
    tables = generate_mixture_tables(count, seed)
    for model, table in enumerate(tables, start=1):
        path = folder.joinpath(f"synthetic_model{model}_mixture.csv")
        serialize_submission(table, path)
        written.append(path)

    path = folder.joinpath("synthetic_model1_bin.csv")
    serialize_submission(generate_bin_table(tables[0]), path)
    written.append(path)

    path = folder.joinpath("synthetic_model1_quantile.csv")
    serialize_submission(generate_quantile_table(tables[0], levels), path)
    written.append(path)

    path = folder.joinpath("synthetic_truth.csv")
    serialize_truth(generate_truth_table(seed), path)
    written.append(path)
    return written


#####################################
# Define main function for this module.
#####################################


def main() -> None:
    """
    Main entry point for the producer.

    - Reads the data folder, seed, model count and quantile levels from .env.
    - Writes the mixture, bin, quantile and truth files.
    """
    logger.info("START producer.")

    folder = get_data_folder()
    seed = get_random_seed()
    count = get_model_count()
    levels = get_hub_quantile_levels()
    if count < 1:
        logger.error(f"Model count must be at least 1, got {count}. Exiting.")
        sys.exit(1)

    try:
        for path in write_all(folder, count, seed, levels):
            logger.info(f"Wrote {path}")
    except MixlineError as e:
        logger.error(f"Could not write synthetic files: {e}")
        sys.exit(1)

    logger.info("END producer.")


#####################################
# Conditional Execution
#####################################

if __name__ == "__main__":
    main()
