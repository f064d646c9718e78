import numpy as np
import pytest

from smallmass.core.ensemble import EnsembleConfig
from smallmass.core.metrics import MetricParams
from smallmass.core.noise_model import QSpec
from smallmass.core.probes import (
    ProbeOptions, asf_decay, contraction_estimate, convergence_probe, envelope, generator_probe, invariant_gap,
    invariant_sample, invariant_sample_report, irreducibility_probe, linear_check, linear_coefficient,
    mode_decay_rate, moment_bound_report, observable_gap, observable_registry, path_batch, record_steps, run_probe,
    small_ball_probe, small_mass_gap, subsample, unit_direction,
)
from smallmass.core.spectral_domain import PhaseState, SpectralField
from smallmass.utils.validators import ValidationError


def test_record_steps():
    assert record_steps(10, 3).tolist() == [0, 3, 6, 9, 10]
    assert record_steps(10, 5).tolist() == [0, 5, 10]


def test_linear_coefficient(canonical_phi, linear_phi):
    assert linear_coefficient(None) == 0.0
    assert linear_coefficient(linear_phi) == -1.0
    assert linear_coefficient(canonical_phi) is None


def test_mode_decay_rate():
    alpha = np.array([1.0, 10.0])

    assert np.array_equal(mode_decay_rate(alpha, 0.0), alpha)
    rates = mode_decay_rate(alpha, 0.1)
    assert rates[0] == pytest.approx(2.0 / (1.0 + np.sqrt(0.6)))
    assert rates[1] == pytest.approx(5.0)


def test_envelope_is_the_future_maximum():
    assert envelope(np.array([3.0, 1.0, 2.0, 0.0])).tolist() == [3.0, 2.0, 2.0, 0.0]


def test_unit_direction(basis):
    direction = unit_direction(basis, 2)
    assert direction.u.coeffs[1] == 1.0 and np.sum(direction.u.coeffs) == 1.0

    with pytest.raises(ValidationError):
        unit_direction(basis, 0)
    with pytest.raises(ValidationError):
        unit_direction(basis, basis.size + 1)


def test_dispatch_errors(make_config):
    cfg = EnsembleConfig(template=make_config(), trajectories=2)

    with pytest.raises(ValidationError) as excinfo:
        run_probe("spectral-gap", cfg)
    assert excinfo.value.code == "unknown-probe"

    with pytest.raises(ValidationError) as excinfo:
        run_probe("mass-gap", cfg)
    assert excinfo.value.code == "needs-sweep"


def test_functional_audit_passes(make_config, canonical_phi):
    cfg = EnsembleConfig(template=make_config(phi=canonical_phi), trajectories=1, masses=[0.1, 0.01])

    result = run_probe("functional-audit", cfg, ProbeOptions(audit_samples=600))

    assert result.report.passed, result.report.failing
    assert result.report.experiment == "functional-audit"
    assert result.report.wall_time is not None
    assert {entry.mass for entry in result.report.per_mass} == {0.1, 0.01}


def test_metric_audit_passes(make_config, canonical_phi):
    cfg = EnsembleConfig(template=make_config(phi=canonical_phi), trajectories=1, masses=[0.1, 0.0],
                         metric=MetricParams(N=2.0, beta=0.05))

    result = run_probe("metric-audit", cfg, ProbeOptions(audit_samples=200))

    assert result.report.passed, result.report.failing
    assert "triangle_constant" in result.report.fitted


def test_invariant_sample_layout(make_config):
    cfg = EnsembleConfig(template=make_config(stride=5), trajectories=4, burn_in=0.01, thinning=2)

    measure, marginal, info = invariant_sample(cfg)

    assert info["per_trajectory"] == 5
    assert info["samples"] == 20 == len(measure)
    assert info["dropped"] == 0
    assert measure.kind == "phase" and measure.v is not None
    assert marginal.v is None and len(marginal) == 20

    smaller = subsample(measure, 5)
    assert len(smaller) == 5
    assert np.array_equal(smaller.u[0], measure.u[0])
    assert np.array_equal(smaller.u[-1], measure.u[-1])
    with pytest.raises(ValidationError) as excinfo:
        subsample(measure, 21)
    assert excinfo.value.code == "size-mismatch"


def test_heat_invariant_sample_has_no_velocity(make_config):
    cfg = EnsembleConfig(template=make_config(stride=5), trajectories=2, burn_in=0.01)

    measure, _, _ = invariant_sample(cfg, mass=0.0)

    assert measure.v is None
    assert measure.kind == "marginal"


def test_stream_offsets_address_trajectories(make_config, canonical_phi):
    config = make_config(phi=canonical_phi, stride=10)
    kwargs = {"config": config, "members": [(0.1, 0), (0.0, 0)], "initials": [config.initial_arrays()]}

    shifted = path_batch([0, 1], offset=2, **kwargs)
    direct = path_batch([2, 3], **kwargs)

    assert np.array_equal(shifted["u"], direct["u"])
    assert shifted["u"].shape == (2, 2, 6, config.basis.size)
    assert np.all(shifted["v"][:, 1] == 0)


def _criteria(report):
    return {criterion.name: criterion for criterion in report.criteria}


def test_moments_start_from_rest(basis, make_config, canonical_phi):
    excited = PhaseState(u=SpectralField.mode(basis, 0, 3.0), v=SpectralField.zeros(basis))
    cfg = EnsembleConfig(template=make_config(phi=canonical_phi, initial=excited, stride=10), trajectories=8,
                         masses=[0.1, 0.01])

    result = moment_bound_report(cfg, "psi2", radius=5.0)

    for m in (0.1, 0.01):
        series = result.series[f"moments_m={m:g}"]
        assert series["rest_mean"][0] == pytest.approx(0.0, abs=1e-12)
        assert series["excited_mean"][0] > 1.0
        assert "plateau" in result.report.entry(m).statistics
    names = _criteria(result.report)
    assert "plateau-uniform" in names
    assert "decay-rate-uniform" not in names
    assert "rate_spread" in result.report.fitted


def test_moments_flag_divergent_exponentials(make_config, canonical_phi):
    cfg = EnsembleConfig(template=make_config(phi=canonical_phi, stride=10), trajectories=8)

    finite = moment_bound_report(cfg, "exp-h", beta=1e-3)
    divergent = moment_bound_report(cfg, "exp-h", beta=1e6)

    assert _criteria(finite.report)["exponential-moment-finite[m=0.1,excited]"].passed
    flagged = _criteria(divergent.report)["exponential-moment-finite[m=0.1,excited]"]
    assert not flagged.passed
    assert flagged.detail == "divergent-exponential-moment"
    assert divergent.report.entry(0.1).values["excited_overflow"] > 0

    with pytest.raises(ValidationError) as excinfo:
        moment_bound_report(cfg, "exp-h")
    assert excinfo.value.code == "out-of-range"
    with pytest.raises(ValidationError) as excinfo:
        moment_bound_report(cfg, "psi3")
    assert excinfo.value.code == "unsupported-functional"


def test_identical_initials_stay_together(basis, make_config, canonical_phi):
    cfg = EnsembleConfig(template=make_config(phi=canonical_phi, stride=10), trajectories=8, masses=[0.1, 0.0])
    start = PhaseState.zeros(basis)

    result = contraction_estimate(cfg, pair=(start, start))

    assert result.report.passed, result.report.failing
    for m in (0.1, 0.0):
        assert np.all(result.series[f"contraction_m={m:g}"]["dtilde_mean"] == 0.0)
        assert np.all(result.series[f"contraction_m={m:g}"]["h_mean"] == 0.0)


def test_linear_contraction_rate(basis, make_config, linear_phi):
    cfg = EnsembleConfig(template=make_config(phi=linear_phi, horizon=0.5, stride=50), trajectories=8,
                         masses=[0.0])
    pair = (PhaseState.zeros(basis), PhaseState(u=SpectralField.mode(basis, 0, 0.1), v=SpectralField.zeros(basis)))

    result = contraction_estimate(cfg, pair=pair)

    entry = result.report.entry(0.0)
    assert entry.fitted["linear_prediction"] == pytest.approx(2.0)
    assert entry.fitted["rate_h"] == pytest.approx(2.0, rel=0.05)
    assert _criteria(result.report)["linear-rate[m=0]"].passed


def test_irreducibility_frequencies(make_config):
    cfg = EnsembleConfig(template=make_config(stride=10), trajectories=16, masses=[0.1, 0.0])

    reached = irreducibility_probe(cfg, R=10.0, r=1e6)
    missed = irreducibility_probe(cfg, R=10.0, r=0.0)

    assert reached.report.passed, reached.report.failing
    for m in (0.1, 0.0):
        entry = reached.report.entry(m)
        assert entry.frequencies["hit"].value == 1.0
        assert entry.frequencies["hit"].trials == 16
        assert entry.values["n_bar"] == 1
        assert entry.values["horizon"] == 0.05
    assert not missed.report.passed
    assert missed.report.entry(0.1).frequencies["hit"].successes == 0
    assert reached.series["irreducibility"]["mass"].tolist() == [0.1, 0.0]


def test_small_ball_table_is_monotone(make_config, canonical_phi):
    cfg = EnsembleConfig(template=make_config(phi=canonical_phi), trajectories=16, masses=[0.1, 0.0])

    result = small_ball_probe(cfg, r=1.0, radii=[0.75])

    assert result.report.passed, result.report.failing
    for m in (0.1, 0.0):
        assert len(result.report.entry(m).frequencies) == 6 * 3
        columns = result.series[f"small_ball_m={m:g}"]
        assert columns["radius"].tolist() == [0.25, 0.5, 0.75, 1.0, 2.0, 4.0]
        assert len(columns) == 4


def test_asf_zero_direction(basis, make_config):
    cfg = EnsembleConfig(template=make_config(stride=10), trajectories=4, masses=[0.1, 0.0])

    result = asf_decay(cfg, direction=PhaseState.zeros(basis))

    assert result.report.passed, result.report.failing
    assert "zero-direction[m=0.1]" in _criteria(result.report)
    assert np.all(result.series["asf_m=0"]["psi1_mean"] == 0.0)


def test_asf_decay_matches_the_shifted_heat_rate(make_config):
    cfg = EnsembleConfig(template=make_config(mass=0.0, horizon=0.5, stride=10), trajectories=4)

    result = asf_decay(cfg)

    entry = result.report.entry(0.0)
    assert entry.values["n_bar"] == 1
    assert entry.fitted["linear_prediction"] == pytest.approx(4.0)
    assert entry.fitted["rate"] == pytest.approx(4.0, rel=0.05)
    assert _criteria(result.report)["linear-rate[m=0]"].passed
    assert entry.statistics["cost_inverse"].mean > 0


def test_linear_mass_gap_against_the_recursion(make_config, linear_phi):
    cfg = EnsembleConfig(template=make_config(phi=linear_phi, horizon=0.5, stride=50), trajectories=400,
                         masses=[0.01, 0.1])

    result = small_mass_gap(cfg, tolerance=0.25)

    criteria = _criteria(result.report)
    assert criteria["linear-oracle[m=0.1]"].passed, criteria["linear-oracle[m=0.1]"].detail
    assert criteria["linear-oracle[m=0.01]"].passed, criteria["linear-oracle[m=0.01]"].detail
    assert criteria["gap-decreasing"].passed
    gaps = result.series["mass_gap"]
    assert gaps["mass"].tolist() == [0.1, 0.01]
    assert gaps["g"][1] < gaps["g"][0]
    assert any("increment" in note for note in result.report.notes)


def test_invariant_gap_layout(make_config, linear_phi):
    cfg = EnsembleConfig(template=make_config(phi=linear_phi, horizon=0.5, stride=50), trajectories=8,
                         burn_in=0.25, masses=[0.01, 0.1])

    shrink = invariant_gap(cfg, sample_size=16)

    floor = shrink.report.fitted["noise_floor"]
    assert floor > 0
    assert shrink.series["invariant_gap"]["mass"].tolist() == [0.1, 0.01]
    assert all(entry.values["gap"] > 0 for entry in shrink.report.per_mass)
    assert {"gap-decreasing", "gap-shrinks"} <= set(_criteria(shrink.report))
    assert len(shrink.measures["baseline"]) == 16

    coincide = invariant_gap(cfg, masses=[0.1], sample_size=16, expect="coincide")
    assert set(_criteria(coincide.report)) == {"coincides[m=0.1]"}

    with pytest.raises(ValidationError) as excinfo:
        invariant_gap(cfg, masses=[0.1], sample_size=16)
    assert excinfo.value.code == "needs-sweep"
    with pytest.raises(ValidationError) as excinfo:
        invariant_gap(cfg, expect="grow")
    assert excinfo.value.code == "out-of-range"


def test_stationary_variance_oracle(basis, make_config, linear_phi, smooth_q):
    cfg = EnsembleConfig(template=make_config(phi=linear_phi, horizon=0.1, stride=10), trajectories=4,
                         burn_in=0.05)

    result = invariant_sample_report(cfg)

    q = smooth_q.values(basis)[:4]
    expected = q ** 2 / (2.0 * (basis.eigenvalues[:4] + 1.0))
    entry = result.report.entry(0.1)
    assert np.allclose(entry.values["oracle_variance"], expected)
    assert {f"var_u{k}" for k in range(1, 5)} <= set(entry.statistics)
    assert "stationary-variance[m=0.1,k=1]" in _criteria(result.report)


def test_observable_gap(basis, make_config, linear_phi):
    params = MetricParams(N=1.0, beta=0.0)
    cfg = EnsembleConfig(template=make_config(phi=linear_phi, stride=10), trajectories=16, masses=[0.1, 0.01],
                         metric=params)
    registry = observable_registry(basis, params, ["constant", "clipped-norm"])

    result = observable_gap(cfg, registry, sample_size=16)

    for m in (0.1, 0.01):
        entry = result.report.entry(m)
        assert entry.statistics["constant"].mean == 0.0
        assert entry.values["clipped-norm_dual_bound"] <= entry.values["clipped-norm_wasserstein"]
        assert _criteria(result.report)[f"dual-bound[clipped-norm,m={m:g}]"].passed

    with pytest.raises(ValidationError) as excinfo:
        observable_registry(basis, params, ["energy"])
    assert excinfo.value.code == "uncertified-observable"
    with pytest.raises(ValidationError) as excinfo:
        observable_gap(cfg, {"raw-norm": (basis.norm, None)})
    assert excinfo.value.code == "uncertified-observable"


def test_generator_check_without_noise(make_config, linear_phi):
    cfg = EnsembleConfig(template=make_config(phi=linear_phi, q=QSpec(coefficients=())), trajectories=1,
                         masses=[0.0])

    result = generator_probe(cfg, "psi2", states=2, paths=4, step=1e-5)

    assert result.report.passed, result.report.failing
    assert len(result.report.criteria) == 2
    entry = result.report.entry(0.0)
    assert entry.values["closed_form_0"] < 0
    assert entry.statistics["state_0"].half_width <= 1e-9 * abs(entry.values["closed_form_0"])


def test_linear_check_against_closed_forms(make_config):
    cfg = EnsembleConfig(template=make_config(horizon=0.1, stride=10), trajectories=400, masses=[0.1, 0.0])

    result = linear_check(cfg, tolerance=0.3)

    assert result.report.passed, result.report.failing
    assert set(_criteria(result.report)) == {
        "convolution-u[m=0.1]", "convolution-v[m=0.1]", "langevin-v[m=0.1]", "convolution-u[m=0]",
    }
    assert "langevin_v" not in result.report.entry(0.0).statistics


def test_convergence_errors_shrink_with_the_step(make_config, canonical_phi):
    cfg = EnsembleConfig(template=make_config(phi=canonical_phi, step=0.01, horizon=0.1), trajectories=4,
                         masses=[0.1, 0.0])

    result = convergence_probe(cfg, levels=3)

    for m in (0.1, 0.0):
        errors = result.series[f"convergence_m={m:g}"]["error"]
        assert len(errors) == 3
        assert np.all(np.diff(errors) < 0)
        assert result.report.entry(m).fitted["order"] > 0.5
