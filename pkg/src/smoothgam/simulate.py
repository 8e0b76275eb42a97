"""Seeded synthetic datasets shaped like the three worked examples."""
import logging
from typing import Callable, Dict

import numpy as np

from .data import Column, Dataset
from .errors import ValidationError
from .families import simulate_tweedie
from .wood import wood_curve

logger = logging.getLogger(__name__)

SIN_NOISE = 0.2
LACTATION_PARAMETERS = (0.9, 0.25, -0.035)
LACTATION_PHI = 0.01
LACTATION_POWER = 1.5
GROWTH_ANIMALS = 18


def simulate_sin(n: int, rng: np.random.Generator) -> Dataset:
    """x uniform on [0, 1], y = sin(2πx) + N(0, 0.2²)."""
    x = np.sort(rng.uniform(0.0, 1.0, n))
    y = np.sin(2 * np.pi * x) + rng.normal(0.0, SIN_NOISE, n)
    return Dataset.from_columns({'x': x, 'y': y}, response='y')


def simulate_lactation(n: int, rng: np.random.Generator) -> Dataset:
    """Weekly fat yields over weeks 1..n, Tweedie distributed around a Wood curve."""
    week = np.arange(1, n + 1, dtype=float)
    mu = wood_curve(week, *LACTATION_PARAMETERS)
    fat = simulate_tweedie(mu, LACTATION_PHI, LACTATION_POWER, rng)
    return Dataset.from_columns({'week': week, 'fat': fat}, response='fat')


def simulate_growth(n: int, rng: np.random.Generator) -> Dataset:
    """Weights of 18 animals observed on n days each.

    Every animal follows a logistic average curve plus a smooth animal-specific deviation; `n_meas` counts the
    measurements averaged into each response, and the noise variance is inversely proportional to it.
    """
    day = np.linspace(0.0, 150.0, n)
    animals = [f'A{index + 1:02d}' for index in range(GROWTH_ANIMALS)]
    average = 20.0 + 100.0 / (1.0 + np.exp(-(day - 80.0) / 20.0))
    rows: Dict[str, list] = {'animal': [], 'day': [], 'weight': [], 'n_meas': []}
    for animal in animals:
        offset, tilt = rng.normal(0.0, 4.0), rng.normal(0.0, 0.05)
        counts = rng.integers(1, 8, n).astype(float)
        weight = average + offset + tilt * (day - 75.0) + rng.normal(0.0, 2.0, n) / np.sqrt(counts)
        rows['animal'] += [animal] * n
        rows['day'] += day.tolist()
        rows['weight'] += weight.tolist()
        rows['n_meas'] += counts.tolist()
    return Dataset.from_columns({
        'animal': Column.factor(rows['animal'], animals),
        'day': rows['day'],
        'weight': rows['weight'],
        'n_meas': rows['n_meas'],
    }, response='weight', weights='n_meas')


SIMULATORS: Dict[str, Callable[[int, np.random.Generator], Dataset]] = {
    'sin': simulate_sin,
    'lactation': simulate_lactation,
    'growth': simulate_growth,
}


def simulate(kind: str, n: int, seed: int = 0) -> Dataset:
    """Draw a dataset of the given kind; the same kind, size and seed always give the same data.

    Raises:
        ValidationError: Unknown kind or a non-positive size.
    """
    if kind not in SIMULATORS:
        raise ValidationError(f'Unknown simulation kind {kind!r}, expected one of {sorted(SIMULATORS)}')
    if n < 1:
        raise ValidationError(f'Simulated sizes must be positive, got {n}')
    logger.debug('Simulating %s data, n=%d, seed=%d', kind, n, seed)
    return SIMULATORS[kind](int(n), np.random.default_rng(seed))


__all__ = ['SIMULATORS', 'simulate', 'simulate_sin', 'simulate_lactation', 'simulate_growth']
