import os
import sys
import time

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


import pytest  # noqa: E402

CASES = (0.2, 0.55, 0.85)


@pytest.fixture(scope="session")
def desk_fields():
    """Desk-scale fields trained once per session at each case speed."""
    from bopinn.pinn import sample_collocation, train_pinn
    from bopinn.wave import WaveDomain

    colloc = sample_collocation(WaveDomain(), 2000, 200, 200, seed=0)
    out = {}
    for c in CASES:
        t0 = time.perf_counter()
        out[c] = train_pinn(c, colloc, seed=0)
        out[c].wall_time = time.perf_counter() - t0
    return colloc, out
