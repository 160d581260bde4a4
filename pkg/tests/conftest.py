"""Shared fixtures. Session-scoped where construction is expensive."""

import numpy as np
import pytest

from gridveil.cases import load_bundled_case
from gridveil.dcmodel import LineStatus
from gridveil.measurements import MeasurementPlan
from gridveil.powerflow import DispatchPoint, ac_powerflow


@pytest.fixture(scope="session")
def rts():
    return load_bundled_case("case24_ieee_rts")


@pytest.fixture(scope="session")
def rts_status(rts):
    return LineStatus.all_in_service(rts)


@pytest.fixture(scope="session")
def rts_dispatch(rts):
    return DispatchPoint(p_gen_mw=np.array([g.p_set_mw for g in rts.generators]))


@pytest.fixture(scope="session")
def rts_pf(rts, rts_status, rts_dispatch):
    return ac_powerflow(rts, rts_status, rts_dispatch)


@pytest.fixture(scope="session")
def rts_plan(rts):
    return MeasurementPlan.full_metering(rts)


@pytest.fixture()
def loop3():
    return load_bundled_case("case3_loop")


@pytest.fixture()
def ring5():
    return load_bundled_case("case5_ring")
