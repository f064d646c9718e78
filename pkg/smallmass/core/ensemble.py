"""Batched trajectory ensembles with an optional process pool and ordered reduction."""

import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from smallmass.config import settings
from smallmass.core.dynamics import SimConfig
from smallmass.core.metrics import MetricParams
from smallmass.utils.validators import ValidationError, validate_count

logger = logging.getLogger(__name__)

BatchKernel = Callable[..., Dict[str, np.ndarray]]


@dataclass
class EnsembleConfig:
    """Ensemble of ``trajectories`` runs of ``template`` at each mass in ``masses``.

    ``burn_in`` is a time; ``thinning`` counts recorded states between kept samples.
    """
    template: SimConfig
    trajectories: int
    burn_in: float = 0.0
    thinning: int = 1
    masses: Tuple[float, ...] = ()
    metric: Optional[MetricParams] = None
    # name -> (observable on u-coefficient rows, Lipschitz constant under dtilde_0 or None)
    observables: Dict[str, Tuple[Callable[[np.ndarray], np.ndarray], Optional[float]]] = field(default_factory=dict)
    workers: int = 1
    mixing_time: float = 0.0
    config_hash: str = "-"

    def __post_init__(self):
        self.trajectories = validate_count(self.trajectories, "trajectory count")
        self.thinning = validate_count(self.thinning, "thinning stride")
        self.workers = validate_count(self.workers, "workers")
        if self.burn_in < 0 or (self.burn_in > 0 and self.burn_in >= self.template.horizon):
            raise ValidationError(
                "out-of-range", f"burn-in {self.burn_in} must lie in [0, horizon = {self.template.horizon})"
            )
        if self.burn_in < self.mixing_time:
            raise ValidationError(
                "out-of-range", f"burn-in {self.burn_in} is below the declared mixing time {self.mixing_time}"
            )
        if not self.masses:
            self.masses = (self.template.mass,)
        self.masses = tuple(float(m) for m in self.masses)

    @property
    def burn_in_records(self) -> int:
        """Number of recorded states that fall inside the burn-in window."""
        per_record = self.template.step * self.template.stride
        return int(np.ceil(self.burn_in / per_record - 1e-9))


def trajectory_batches(count: int, batch_size: Optional[int] = None) -> List[List[int]]:
    """Consecutive trajectory indices split into batches."""
    size = int(batch_size or settings.TRAJECTORY_BATCH)
    return [list(range(start, min(start + size, count))) for start in range(0, count, size)]


def _run_indexed(args: Tuple[int, BatchKernel, List[int], Dict[str, Any]]):
    index, kernel, trajectories, kwargs = args
    return index, kernel(trajectories, **kwargs)


def map_batches(kernel: BatchKernel, count: int, workers: int = 1,
                batch_size: Optional[int] = None, **kwargs) -> List[Dict[str, np.ndarray]]:
    """Apply ``kernel(trajectory_indices, **kwargs)`` to every batch; results come back in batch order."""
    batches = trajectory_batches(count, batch_size)
    jobs = [(i, kernel, batch, kwargs) for i, batch in enumerate(batches)]
    max_workers = min(int(workers), len(batches), os.cpu_count() or 1)

    results = []
    if max_workers > 1:
        try:
            with ProcessPoolExecutor(max_workers=max_workers) as executor:
                futures = [executor.submit(_run_indexed, job) for job in jobs]
                for future in as_completed(futures):
                    results.append(future.result())
        except (OSError, RuntimeError) as e:
            logger.warning(f"Process pool failed ({e}); running batches inline")
            results = []

    if not results:
        results = [_run_indexed(job) for job in jobs]

    results.sort(key=lambda item: item[0])
    return [result for _, result in results]


def concatenate_batches(results: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """Join per-batch arrays along the trajectory axis."""
    if not results:
        return {}
    return {key: np.concatenate([r[key] for r in results], axis=0) for key in results[0]}


def run_ensemble(kernel: BatchKernel, count: int, workers: int = 1, batch_size: Optional[int] = None,
                 **kwargs) -> Dict[str, np.ndarray]:
    logger.info(f"Running {count} trajectories in {len(trajectory_batches(count, batch_size))} batches on {workers} workers")
    return concatenate_batches(map_batches(kernel, count, workers=workers, batch_size=batch_size, **kwargs))
