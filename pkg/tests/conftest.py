"""Shared fixtures: OCP table sets and a reference synthetic cell."""

from __future__ import annotations

import numpy as np
import pytest

from celldx.mechanistic import MechanisticState, derive_ocv, solve_top_of_charge
from celldx.ocp import synthetic_tables, toy_tables

V_MAX = 4.2
V_MIN = 3.0
Q_NOM = 4.84


@pytest.fixture(scope="session")
def synth_tables():
    return synthetic_tables()


@pytest.fixture(scope="session")
def toy_ocps():
    return toy_tables()


@pytest.fixture(scope="session")
def fresh_state(synth_tables) -> MechanisticState:
    ocp_p, ocp_n = synth_tables
    cp, cn = 5.5, Q_NOM / 0.89
    n_li = 0.95 * cn + 0.05 * cp
    top = solve_top_of_charge(n_li, cp, cn, ocp_p, ocp_n, V_MAX)
    assert not top.boundary_hit
    return MechanisticState(x0=top.x0, y0=top.y0, cp=cp, cn=cn)


@pytest.fixture(scope="session")
def fresh_ocv(synth_tables, fresh_state):
    ocp_p, ocp_n = synth_tables
    curve, q_cell = derive_ocv(fresh_state, ocp_p, ocp_n, V_MIN, V_MAX, m=256)
    assert abs(q_cell - Q_NOM) < 5e-3
    return curve


def linear_discharge(n: int = 33, q_max: float = Q_NOM, v0: float = 4.2, v1: float = 3.5):
    from celldx.curves import PseudoOcvCurve

    q = np.linspace(0.0, q_max, n)
    return PseudoOcvCurve(q=q, v=v0 + (v1 - v0) * q / q_max)
