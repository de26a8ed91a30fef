import numpy as np
import pandas as pd
import pytest

from agents.core.curves import compute_ic_curve, fit_qv_model
from agents.core.errors import ChargeComplete, ConfigError, InputError
from agents.core.simulate import (
    CellSpec,
    FleetTemplate,
    ModuleSpec,
    OCVModel,
    SamplerSpec,
    SimulationConfig,
    default_ocv,
    generate_fleet,
    labels_frame,
    run_cc_charge,
    simulate_cc_charge,
    solve_current_split,
)

FAST = SimulationConfig(timestep=10.0)


def module(c_soh, resistances, interconnect=0.0, fresh=3.0):
    cells = [CellSpec(fresh, s, r) for s, r in zip(c_soh, resistances)]
    return ModuleSpec(cells, interconnect)


def test_ocv_table_is_monotone_with_two_plateaus():
    ocv = default_ocv()
    soc = np.linspace(0.0, 1.0, 2001)
    slope = np.gradient(ocv.voltage_at(soc), soc)
    assert np.all(slope > 0)
    inner = slope[100:-100]
    local_min = (inner[1:-1] < inner[:-2]) & (inner[1:-1] < inner[2:])
    assert local_min.sum() >= 2


def test_ocv_round_trip():
    ocv = default_ocv()
    assert float(ocv.voltage_at(ocv.soc_at(3.7))) == pytest.approx(3.7, abs=1e-9)


def test_ocv_rejects_non_monotone_table():
    with pytest.raises(ConfigError):
        OCVModel((0.0, 0.5, 1.0), (3.0, 3.9, 3.8))


def test_split_symmetric_cells():
    m = module([0.9] * 3, [0.02] * 3)
    split = solve_current_split(m, [0.4] * 3, 3.0)
    np.testing.assert_allclose(split.currents, [1.0, 1.0, 1.0], atol=1e-9)


def test_lower_ocv_cell_draws_more_current():
    m = module([0.9, 0.9], [0.02, 0.02])
    split = solve_current_split(m, [0.2, 0.6], 2.0)
    assert split.currents[0] > split.currents[1]


def test_split_matches_bisection_reference():
    r = np.array([0.015, 0.018, 0.021])
    m = module([0.9, 0.85, 0.8], r)
    socs = [0.3, 0.3, 0.3]
    total = 4.5
    ocv = default_ocv().voltage_at(socs)

    lo, hi = ocv.min(), ocv.max() + total * r.max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sum((mid - ocv) / r) > total:
            hi = mid
        else:
            lo = mid
    reference = (0.5 * (lo + hi) - ocv) / r

    split = solve_current_split(m, socs, total)
    np.testing.assert_allclose(split.currents, reference, atol=1e-8)
    assert split.kirchhoff_residual <= 1e-9
    assert split.voltage_residual <= 1e-9


def test_single_cell_carries_the_whole_current():
    m = module([0.9], [0.02])
    split = solve_current_split(m, [0.4], 1.5)
    np.testing.assert_allclose(split.currents, [1.5], atol=1e-9)
    assert split.kirchhoff_residual <= 1e-9
    ocv = float(m.ocv.voltage_at(np.array([0.4]))[0])
    assert split.node_voltage == pytest.approx(ocv + 1.5 * 0.02, abs=1e-9)


def test_split_signals_complete_charge():
    with pytest.raises(ChargeComplete):
        solve_current_split(module([0.9] * 2, [0.02] * 2), [1.0, 1.0], 1.0)


def test_split_rejects_nonpositive_current():
    with pytest.raises(InputError):
        solve_current_split(module([0.9], [0.02]), [0.5], 0.0)


def test_single_cell_capacity_over_window():
    m = module([0.9], [0.02], interconnect=0.001)
    profile = simulate_cc_charge(m, FAST)
    current = FAST.c_rate * 3.0
    ocv = default_ocv()
    window = ocv.soc_at(FAST.v_max - current * 0.021) - ocv.soc_at(FAST.v_min)
    assert profile.charged_capacity == pytest.approx(2.7 * window, rel=5e-3)


def test_identical_cells_scale_single_cell_profile():
    single = simulate_cc_charge(module([0.9], [0.02]), FAST)
    triple = simulate_cc_charge(module([0.9] * 3, [0.02] * 3), FAST)
    assert triple.capacity.shape == single.capacity.shape
    np.testing.assert_allclose(triple.capacity, 3.0 * single.capacity, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(triple.voltage, single.voltage, atol=1e-6)


def test_charge_conservation_and_kirchhoff():
    m = FleetTemplate().build([0.992, 0.806, 0.785])
    run = run_cc_charge(m, FAST, "M001")
    assert run.max_kirchhoff_residual <= 1e-9
    assert run.profile.charged_capacity == pytest.approx(run.cell_charge.sum(), rel=1e-3)
    assert np.all(np.diff(run.profile.capacity) >= 0)
    assert np.all(np.diff(run.profile.voltage) >= -1e-12)
    assert run.profile.voltage[-1] == pytest.approx(FAST.v_max)


def test_start_above_v_max_is_empty_profile():
    config = SimulationConfig(v_min=3.9, v_max=3.91, timestep=10.0)
    with pytest.raises(InputError, match="empty profile"):
        simulate_cc_charge(module([0.9], [0.02], interconnect=0.01), config)


def test_heterogeneous_module_distorts_ic_curve():
    template = FleetTemplate(simulation=FAST)
    hetero = simulate_cc_charge(template.build([0.992, 0.806, 0.785]), FAST)
    homo = simulate_cc_charge(template.build([0.861] * 3), FAST)
    ic_het = compute_ic_curve(fit_qv_model(hetero))
    ic_hom = compute_ic_curve(fit_qv_model(homo))

    lo = max(ic_het.window[0], ic_hom.window[0])
    hi = min(ic_het.window[1], ic_hom.window[1])
    grid = np.linspace(lo, hi, 400)[20:-20]
    gap = np.abs(np.interp(grid, ic_het.grid, ic_het.values)
                 - np.interp(grid, ic_hom.grid, ic_hom.values))
    assert gap.max() > 0.005 * ic_hom.values.max()


def test_fleet_size_and_order():
    records = generate_fleet(3, SamplerSpec(), [0.5, 0.25], seed=1,
                             template=FleetTemplate(simulation=FAST))
    assert [(r.module_id, r.c_rate) for r in records] == [
        ("M001", 0.5), ("M001", 0.25), ("M002", 0.5), ("M002", 0.25),
        ("M003", 0.5), ("M003", 0.25),
    ]
    assert records[0].labels == records[1].labels


def test_fresh_point_mass_fleet():
    records = generate_fleet(1, SamplerSpec(kind="point", value=1.0), [0.5], seed=0,
                             template=FleetTemplate(simulation=FAST))
    labels = records[0].labels
    assert labels.m_soh == 1.0 and labels.sd == 0.0
    assert records[0].m_soh_measured == 1.0


def test_fleet_is_deterministic(small_fleet):
    again = generate_fleet(12, SamplerSpec(low=0.78, high=1.0), [0.5, 0.25], seed=3,
                           template=FleetTemplate(simulation=FAST))
    pd.testing.assert_frame_equal(labels_frame(small_fleet), labels_frame(again),
                                  check_exact=True)


def test_label_table_consistency(small_fleet):
    table = labels_frame(small_fleet)
    cells = table[["c_soh_1", "c_soh_2", "c_soh_3"]].to_numpy()
    np.testing.assert_allclose(table["m_soh"], cells.mean(axis=1), rtol=0, atol=1e-15)
    assert list(table.columns[:6]) == ["module_id", "c_rate", "m_soh", "sd", "range", "cv"]
    assert table["m_soh_measured"].between(0.5, 1.05).all()


def test_degenerate_sampler_is_config_error():
    with pytest.raises(ConfigError):
        SamplerSpec(low=0.9, high=0.9)


@pytest.mark.slow
def test_reference_fleet_has_156_datapoints():
    records = generate_fleet(78, SamplerSpec(), [0.5, 0.25], seed=0,
                             template=FleetTemplate(simulation=FAST))
    assert len(records) == 156
