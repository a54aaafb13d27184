import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

__all__ = ["SPEED_OF_LIGHT", "dbm_to_watt", "watt_to_dbm"]


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(watt) + 30.0
