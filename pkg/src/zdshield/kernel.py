"""Compiled closed-loop engine for the four-tank benchmark.

Mirrors :class:`zdshield.closedloop.BlockLoop` step for step; the generic
loop is the readable reference and the tests hold both to the same numbers.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# cfg slots
LAM, THETA, T_ON, T_OFF, TAU, ARM, HOLD, ATTACK, RECOVER, FORM = range(10)
# stats slots
FLAG_T, PLANT_CLAMPS, ATTACK_CLAMPS, GRAD_SKIPS = range(4)


@njit(cache=True)
def _sq(v):
    return math.sqrt(v) if v > 0.0 else 0.0


@njit(cache=True)
def _H(c, z0, z1, x0, x1):
    s3 = _sq(z0 + c[1] * x1)
    s4 = _sq(z1 + c[0] * x0)
    return (-c[2] * s3 + c[4] * (_sq(x1) - s4),
            -c[3] * s4 + c[5] * (_sq(x0) - s3))


@njit(cache=True)
def _F(c, z0, z1, x0, x1):
    return (c[2] * (_sq(z0 + c[1] * x1) - _sq(x0)),
            c[3] * (_sq(z1 + c[0] * x0) - _sq(x1)))


@njit(cache=True)
def _dF(c, z0, z1, x0, x1):
    h3 = z0 + c[1] * x1
    h4 = z1 + c[0] * x0
    d0 = c[2] / (2.0 * math.sqrt(h3)) if h3 > 0.0 else 0.0
    d1 = c[3] / (2.0 * math.sqrt(h4)) if h4 > 0.0 else 0.0
    return d0, d1


@njit(cache=True)
def _inside(c, z0, z1, x0, x1):
    return x0 >= 0.0 and x1 >= 0.0 and z0 + c[1] * x1 >= 0.0 and z1 + c[0] * x0 >= 0.0


@njit(cache=True)
def _ff(minv, outflow, r0, r1):
    a = outflow[0] * _sq(r0)
    b = outflow[1] * _sq(r1)
    return minv[0, 0] * a + minv[0, 1] * b, minv[1, 0] * a + minv[1, 1] * b


@njit(cache=True)
def _rhs(S, ca, cn, gains, minv, outflow, opv, center, offset, cfg,
         y0, y1, r0, r1, att, eng, out, sig):
    z0, z1, x0, x1, c0, c1 = S[0], S[1], S[2], S[3], S[4], S[5]
    m0, m1, mx0, mx1, mc0, mc1 = S[6], S[7], S[8], S[9], S[10], S[11]
    d0, d1, w0, w1 = S[12], S[13], S[14], S[15]
    kp0, kp1, ki0, ki1, sgn = gains[0], gains[1], gains[2], gains[3], gains[4]
    xs0, xs1, zn0, zn1, Fz0, Fz1 = opv[0], opv[1], opv[4], opv[5], opv[6], opv[7]

    f0, f1 = _ff(minv, outflow, r0, r1)
    uc0 = f0 + sgn * (kp0 * (y0 - r0) + ki0 * c0)
    uc1 = f1 + sgn * (kp1 * (y1 - r1) + ki1 * c1)

    g0, g1 = _ff(minv, outflow, max(y0, 1e-6), max(y1, 1e-6))
    um0 = g0 + sgn * (kp0 * (mx0 - y0) + ki0 * mc0)
    um1 = g1 + sgn * (kp1 * (mx1 - y1) + ki1 * mc1)

    a0 = 0.0
    a1 = 0.0
    if att:
        Fa, Fb = _F(cn, d0 + zn0, d1 + zn1, xs0, xs1)
        a0 = -(Fa - Fz0) / cn[6]
        a1 = -(Fb - Fz1) / cn[7]
        th = cfg[THETA]
        if th != 0.0:
            ct = math.cos(th)
            st = math.sin(th)
            a0, a1 = ct * a0 - st * a1, st * a0 + ct * a1

    sign_r = -1.0 if cfg[FORM] == 0.0 else 1.0
    zr0 = 0.0
    zr1 = 0.0
    if eng:
        Fa, Fb = _F(cn, w0 + zn0, w1 + zn1, xs0, xs1)
        zr0 = sign_r * (Fa - Fz0) / cn[6]
        zr1 = sign_r * (Fb - Fz1) / cn[7]

    up0 = uc0 + a0 - zr0
    up1 = uc1 + a1 - zr1
    sy0 = math.sqrt(max(y0, 1e-6))
    sy1 = math.sqrt(max(y1, 1e-6))
    rr0 = up0 - um0
    rr1 = up1 - um1
    e0 = rr0 - (offset[0, 0] + offset[1, 0] * sy0 + offset[2, 0] * sy1)
    e1 = rr1 - (offset[0, 1] + offset[1, 1] * sy0 + offset[2, 1] * sy1)

    hz0, hz1 = _H(ca, z0, z1, x0, x1)
    fx0, fx1 = _F(ca, z0, z1, x0, x1)
    out[0] = hz0
    out[1] = hz1
    out[2] = fx0 + ca[6] * up0
    out[3] = fx1 + ca[7] * up1
    out[4] = y0 - r0
    out[5] = y1 - r1
    hm0, hm1 = _H(cn, m0, m1, mx0, mx1)
    fm0, fm1 = _F(cn, m0, m1, mx0, mx1)
    out[6] = hm0
    out[7] = hm1
    out[8] = fm0 + cn[6] * um0
    out[9] = fm1 + cn[7] * um1
    out[10] = mx0 - y0
    out[11] = mx1 - y1
    out[12] = 0.0
    out[13] = 0.0
    if att:
        hd0, hd1 = _H(cn, d0 + zn0, d1 + zn1, xs0, xs1)
        out[12] = hd0
        out[13] = hd1
    out[14] = 0.0
    out[15] = 0.0
    skipped = 0.0
    if eng:
        j0, j1 = _dF(cn, w0 + zn0, w1 + zn1, xs0, xs1)
        j0 = sign_r * j0 / cn[6]
        j1 = sign_r * j1 / cn[7]
        nj = j0 * j0 + j1 * j1
        if nj >= 1e-24:
            out[14] = cfg[LAM] * j0 * e0 / nj
            out[15] = cfg[LAM] * j1 * e1 / nj
        else:
            skipped = 1.0
        hw0, hw1 = _H(cn, w0 + center[0], w1 + center[1], xs0, xs1)
        out[14] += hw0
        out[15] += hw1

    sig[0] = uc0
    sig[1] = uc1
    sig[2] = um0
    sig[3] = um1
    sig[4] = a0
    sig[5] = a1
    sig[6] = zr0
    sig[7] = zr1
    sig[8] = up0
    sig[9] = up1
    sig[10] = rr0
    sig[11] = rr1
    sig[12] = e0
    sig[13] = e1
    sig[14] = skipped


@njit(cache=True)
def run_kernel(S, ca, cn, gains, minv, outflow, opv, center, w_init, offset, cfg,
               t0, dt, n, ref_grid, ref_stage, noise, rec, stats):
    """Integrate the closed loop and fill ``rec`` (one row per grid point).

    Row layout: 16 states, y(2), ref(2), uc(2), umc(2), alpha(2), zr(2),
    up(2), r(2), rc(2), |r|, |rc|, flag, engaged.
    """
    k1 = np.zeros(16)
    k2 = np.zeros(16)
    k3 = np.zeros(16)
    k4 = np.zeros(16)
    tmp = np.zeros(16)
    sig = np.zeros(15)
    scratch = np.zeros(15)
    attack_on = cfg[ATTACK] != 0.0
    rec_on = cfg[RECOVER] != 0.0
    hold = int(cfg[HOLD])
    eng = False
    flagged = False
    run = 0
    stats[FLAG_T] = np.nan
    for k in range(n + 1):
        t = t0 + k * dt
        y0 = S[2] + noise[k, 0]
        y1 = S[3] + noise[k, 1]
        eps = 1e-9 * max(1.0, abs(t))
        att = attack_on and t >= cfg[T_ON] - eps and t < cfg[T_OFF] - eps
        if not _inside(ca, S[0], S[1], S[2], S[3]):
            stats[PLANT_CLAMPS] += 1.0
        if att and not _inside(cn, S[12] + opv[4], S[13] + opv[5], opv[0], opv[1]):
            stats[ATTACK_CLAMPS] += 1.0
        _rhs(S, ca, cn, gains, minv, outflow, opv, center, offset, cfg,
             y0, y1, ref_grid[k, 0], ref_grid[k, 1], att, eng, k1, sig)
        if not flagged and t >= cfg[ARM] - eps:
            if math.hypot(sig[12], sig[13]) > cfg[TAU]:
                run += 1
            else:
                run = 0
            if run >= hold:
                flagged = True
                stats[FLAG_T] = t
                if rec_on:
                    eng = True
                    S[14] = w_init[0]
                    S[15] = w_init[1]
                    _rhs(S, ca, cn, gains, minv, outflow, opv, center, offset, cfg,
                         y0, y1, ref_grid[k, 0], ref_grid[k, 1], att, eng, k1, sig)
        for i in range(16):
            rec[k, i] = S[i]
        rec[k, 16] = y0
        rec[k, 17] = y1
        rec[k, 18] = ref_grid[k, 0]
        rec[k, 19] = ref_grid[k, 1]
        for i in range(14):
            rec[k, 20 + i] = sig[i]
        rec[k, 34] = math.hypot(sig[10], sig[11])
        rec[k, 35] = math.hypot(sig[12], sig[13])
        rec[k, 36] = 1.0 if flagged else 0.0
        rec[k, 37] = 1.0 if eng else 0.0
        stats[GRAD_SKIPS] += sig[14]
        if k == n:
            break
        for i in range(16):
            tmp[i] = S[i] + 0.5 * dt * k1[i]
        _rhs(tmp, ca, cn, gains, minv, outflow, opv, center, offset, cfg,
             y0, y1, ref_stage[k, 1, 0], ref_stage[k, 1, 1], att, eng, k2, scratch)
        for i in range(16):
            tmp[i] = S[i] + 0.5 * dt * k2[i]
        _rhs(tmp, ca, cn, gains, minv, outflow, opv, center, offset, cfg,
             y0, y1, ref_stage[k, 1, 0], ref_stage[k, 1, 1], att, eng, k3, scratch)
        for i in range(16):
            tmp[i] = S[i] + dt * k3[i]
        _rhs(tmp, ca, cn, gains, minv, outflow, opv, center, offset, cfg,
             y0, y1, ref_stage[k, 2, 0], ref_stage[k, 2, 1], att, eng, k4, scratch)
        for i in range(16):
            S[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(16):
            if not math.isfinite(S[i]):
                return k + 1, i
    return -1, -1
