import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from agents.core.features import extract_features, feature_table  # noqa: E402
from agents.core.simulate import (  # noqa: E402
    FleetTemplate,
    SamplerSpec,
    SimulationConfig,
    generate_fleet,
    labels_frame,
)

FAST_SIM = SimulationConfig(timestep=10.0)


@pytest.fixture(autouse=True)
def _log_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("MODHEALTH_LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture(scope="session")
def small_fleet():
    """Twelve modules at two C-rates; cheap enough for every test session."""
    return generate_fleet(12, SamplerSpec(low=0.78, high=1.0), [0.5, 0.25], seed=3,
                          template=FleetTemplate(simulation=FAST_SIM))


@pytest.fixture(scope="session")
def fleet_tables(small_fleet):
    vectors = [extract_features(rec.profile)[2] for rec in small_fleet]
    return feature_table(vectors), labels_frame(small_fleet)


def make_table(n: int, seed: int = 0) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Feature and label tables keyed by (module_id, c_rate) with a known signal:
    sd rises with f1 and, half as steeply, with f2; f3 and f4 are pure noise."""
    rng = np.random.default_rng(seed)
    f1, f2, f3, f4 = rng.uniform(0.0, 1.0, size=(4, n))
    keys = {"module_id": [f"M{i + 1:03d}" for i in range(n)], "c_rate": [0.5] * n}
    features = pd.DataFrame({**keys, "f1": f1, "f2": f2, "f3": f3, "f4": f4})
    sd = 0.05 + 0.04 * f1 + 0.02 * f2 + rng.normal(0.0, 0.001, n)
    labels = pd.DataFrame({**keys, "m_soh": 0.9 - sd, "sd": sd, "range": 2.5 * sd,
                           "cv": sd / (0.9 - sd)})
    return features, labels
