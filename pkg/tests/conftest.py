import numpy as np
import pytest

from epsense.dynamics import extract_limit_cycle, integrate, transient_cutoff
from epsense.effective import make_dressing, mirror_ends, self_consistent_amplitude
from epsense.model import SystemParams

FIG2 = SystemParams(
    topology="binary", omega=(1.0, 1.0), gamma_m=1e-3, kappa=0.1, g=2.5e-4, J=2.2e-2, delta=(-1.0, 1.0),
)
FIG6 = SystemParams(
    topology="ternary", omega=(1.0, 1.0, 1.0), gamma_m=1e-3, kappa=0.1, g=2.5e-4, J=2.2e-3, delta=(-1.0, 1.0),
    alpha_in=160.0,
)
ALPHA_REF = 440.0


@pytest.fixture(scope="session")
def fig2_state():
    return self_consistent_amplitude(FIG2.with_(alpha_in=ALPHA_REF), spring=False)


@pytest.fixture(scope="session")
def fig2_dressing(fig2_state):
    return make_dressing(FIG2, fig2_state.cycle, spring=False)


@pytest.fixture(scope="session")
def fig6_traj():
    return integrate(FIG6, t_end=2e5, record_start=transient_cutoff(2e5))


@pytest.fixture(scope="session")
def fig6_cycle(fig6_traj):
    return extract_limit_cycle(fig6_traj)


@pytest.fixture(scope="session")
def ternary_dressing(fig6_cycle):
    return make_dressing(FIG6, mirror_ends(fig6_cycle), spring=False, use_centers=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
