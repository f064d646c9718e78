import numpy as np
import pytest

from smallmass.core.ensemble import EnsembleConfig, concatenate_batches, run_ensemble, trajectory_batches
from smallmass.core.probes import path_batch
from smallmass.utils.validators import ValidationError


def test_trajectory_batches():
    assert trajectory_batches(5, 2) == [[0, 1], [2, 3], [4]]
    assert trajectory_batches(3, 8) == [[0, 1, 2]]
    assert trajectory_batches(0, 4) == []


def test_concatenate_batches_keeps_order():
    joined = concatenate_batches([{"x": np.array([1, 2])}, {"x": np.array([3])}])
    assert joined["x"].tolist() == [1, 2, 3]
    assert concatenate_batches([]) == {}


def test_pool_and_inline_runs_agree(make_config, canonical_phi):
    config = make_config(phi=canonical_phi, stride=10)
    kwargs = {"config": config, "members": [(0.1, 0)], "initials": [config.initial_arrays()]}

    inline = run_ensemble(path_batch, 4, workers=1, batch_size=2, **kwargs)
    pooled = run_ensemble(path_batch, 4, workers=2, batch_size=2, **kwargs)

    assert inline["u"].shape == (4, 1, 6, config.basis.size)
    assert np.array_equal(inline["u"], pooled["u"])
    assert np.array_equal(inline["v"], pooled["v"])
    assert np.all(inline["alive"])


def test_ensemble_config_validation(make_config):
    template = make_config()

    with pytest.raises(ValidationError) as excinfo:
        EnsembleConfig(template=template, trajectories=4, burn_in=0.05)
    assert excinfo.value.code == "out-of-range"

    with pytest.raises(ValidationError):
        EnsembleConfig(template=template, trajectories=4, burn_in=0.01, mixing_time=0.02)
    with pytest.raises(ValidationError):
        EnsembleConfig(template=template, trajectories=0)
    with pytest.raises(ValidationError):
        EnsembleConfig(template=template, trajectories=2, thinning=0)


def test_masses_default_to_the_template(make_config):
    cfg = EnsembleConfig(template=make_config(mass=0.2), trajectories=2)
    assert cfg.masses == (0.2,)

    swept = EnsembleConfig(template=make_config(), trajectories=2, masses=[0.1, 0])
    assert swept.masses == (0.1, 0.0)


def test_burn_in_records(make_config):
    assert EnsembleConfig(template=make_config(stride=10), trajectories=1, burn_in=0.03).burn_in_records == 3
    assert EnsembleConfig(template=make_config(horizon=1.0, stride=10), trajectories=1,
                          burn_in=0.5).burn_in_records == 50
    assert EnsembleConfig(template=make_config(), trajectories=1).burn_in_records == 0
