"""Unit conversions.

Configuration values use GHz, MHz, ns, us, nH, pF/m; everything inside the
numerical kernels is SI (rad/s, s, H, F/m).
"""

import math

TWO_PI = 2.0 * math.pi


def ghz_to_rad(f_ghz):
    return TWO_PI * f_ghz * 1e9


def mhz_to_rad(f_mhz):
    return TWO_PI * f_mhz * 1e6


def rad_to_ghz(w):
    return w / TWO_PI / 1e9


def rad_to_mhz(w):
    return w / TWO_PI / 1e6


def ns(t_ns):
    return t_ns * 1e-9


def us(t_us):
    return t_us * 1e-6


def to_ns(t):
    return t * 1e9


def to_us(t):
    return t * 1e6


def nh(l_nh):
    return l_nh * 1e-9


def to_nh(l):
    return l * 1e9


def pf(c_pf):
    return c_pf * 1e-12


def to_ff(c):
    return c * 1e15
