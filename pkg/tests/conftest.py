import pytest

import crqflow as cq


@pytest.fixture(scope="session")
def model4():
    return cq.get_model(4, 2.0)


@pytest.fixture(scope="session")
def model6():
    return cq.get_model(6, 2.0)


@pytest.fixture(scope="session")
def model8():
    # Assembly-oriented context: polynomial integrands only need oversample 1.
    return cq.get_model(8, 1.0)


@pytest.fixture(scope="session")
def model8_flow():
    return cq.get_model(8, 2.0)


@pytest.fixture(scope="session")
def flat4(model4):
    return cq.make_background(model4.zero_field(), model4)


@pytest.fixture(scope="session")
def flat8(model8_flow):
    return cq.make_background(model8_flow.zero_field(), model8_flow)


def _preset_cfg(n):
    return cq.FlowConfig(n=n, oversample=2.0, integrator="exact_perp",
                         t_max=10.0, tol_converge=1e-8)


@pytest.fixture(scope="session")
def preset_trivial(model8_flow, flat8):
    traj = cq.run_flow(flat8, model8_flow.zero_field(), _preset_cfg(8))
    return flat8, traj


@pytest.fixture(scope="session")
def preset_mode11(model8_flow, flat8):
    lam0 = model8_flow.mode11_field(0.1)
    traj = cq.run_flow(flat8, lam0, _preset_cfg(8))
    return flat8, traj


@pytest.fixture(scope="session")
def preset_c03(model8_flow):
    bg = cq.make_background(model8_flow.mode11_field(0.3), model8_flow)
    traj = cq.run_flow(bg, model8_flow.zero_field(), _preset_cfg(8))
    return bg, traj
