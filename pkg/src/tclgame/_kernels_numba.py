"""Numba backend for the hot loops.

Same arithmetic as ``_kernels_numpy.py``, compiled with ``@njit``.  The two
files must stay in lockstep expression-for-expression; the cross-backend
tests assert bit-identical outputs.
"""

from numba import njit


@njit(cache=True)
def _sweep_rhs(p11, p12, p22, f1, f2, ch, ev,
               a11, a12, a21, a22, m11, m12, m22, c1, c2,
               q11, q12, q22, l2_base, e_weight, s11sq, s22sq,
               statedep_p, const_chi):
    pa11 = p11 * a11 + p12 * a21
    pa12 = p11 * a12 + p12 * a22
    pa21 = p12 * a11 + p22 * a21
    pa22 = p12 * a12 + p22 * a22
    pm11 = p11 * m11 + p12 * m12
    pm12 = p11 * m12 + p12 * m22
    pm21 = p12 * m11 + p22 * m12
    pm22 = p12 * m12 + p22 * m22
    pmp11 = pm11 * p11 + pm12 * p12
    pmp12 = pm11 * p12 + pm12 * p22
    pmp22 = pm21 * p12 + pm22 * p22

    dp11 = -(2.0 * pa11 + pmp11 + q11)
    dp12 = -(pa12 + pa21 + pmp12 + q12)
    dp22 = -(2.0 * pa22 + pmp22 + q22)
    if statedep_p == 1:
        dp11 = dp11 - s11sq * p11
        dp22 = dp22 - s22sq * p22

    l2 = e_weight * ev + l2_base
    df1 = -(a11 * f1 + a21 * f2 + p11 * c1 + p12 * c2 + pm11 * f1 + pm12 * f2)
    df2 = -(a12 * f1 + a22 * f2 + p12 * c1 + p22 * c2 + pm21 * f1 + pm22 * f2 + l2)

    dch = -(f1 * c1 + f2 * c2
            + 0.5 * (m11 * f1 * f1 + 2.0 * m12 * f1 * f2 + m22 * f2 * f2))
    if const_chi == 1:
        dch = dch - 0.5 * (s11sq * p11 + s22sq * p22)
    return dp11, dp12, dp22, df1, df2, dch


@njit(cache=True)
def riccati_sweep(out, e_stage, dt,
                  a11, a12, a21, a22, m11, m12, m22, c1, c2,
                  q11, q12, q22, l2_base, e_weight, s11sq, s22sq,
                  statedep_p, const_chi, use_rk4, guard):
    K = out.shape[0] - 1
    h = -dt
    for k in range(K - 1, -1, -1):
        p11 = out[k + 1, 0]
        p12 = out[k + 1, 1]
        p22 = out[k + 1, 2]
        f1 = out[k + 1, 3]
        f2 = out[k + 1, 4]
        ch = out[k + 1, 5]
        e_hi = e_stage[2 * k + 2]
        e_mid = e_stage[2 * k + 1]
        e_lo = e_stage[2 * k]
        if use_rk4 == 1:
            k1 = _sweep_rhs(p11, p12, p22, f1, f2, ch, e_hi,
                            a11, a12, a21, a22, m11, m12, m22, c1, c2,
                            q11, q12, q22, l2_base, e_weight, s11sq, s22sq,
                            statedep_p, const_chi)
            hh = 0.5 * h
            k2 = _sweep_rhs(p11 + hh * k1[0], p12 + hh * k1[1], p22 + hh * k1[2],
                            f1 + hh * k1[3], f2 + hh * k1[4], ch + hh * k1[5], e_mid,
                            a11, a12, a21, a22, m11, m12, m22, c1, c2,
                            q11, q12, q22, l2_base, e_weight, s11sq, s22sq,
                            statedep_p, const_chi)
            k3 = _sweep_rhs(p11 + hh * k2[0], p12 + hh * k2[1], p22 + hh * k2[2],
                            f1 + hh * k2[3], f2 + hh * k2[4], ch + hh * k2[5], e_mid,
                            a11, a12, a21, a22, m11, m12, m22, c1, c2,
                            q11, q12, q22, l2_base, e_weight, s11sq, s22sq,
                            statedep_p, const_chi)
            k4 = _sweep_rhs(p11 + h * k3[0], p12 + h * k3[1], p22 + h * k3[2],
                            f1 + h * k3[3], f2 + h * k3[4], ch + h * k3[5], e_lo,
                            a11, a12, a21, a22, m11, m12, m22, c1, c2,
                            q11, q12, q22, l2_base, e_weight, s11sq, s22sq,
                            statedep_p, const_chi)
            w = h / 6.0
            out[k, 0] = p11 + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            out[k, 1] = p12 + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            out[k, 2] = p22 + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
            out[k, 3] = f1 + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
            out[k, 4] = f2 + w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
            out[k, 5] = ch + w * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5])
        else:
            k1 = _sweep_rhs(p11, p12, p22, f1, f2, ch, e_hi,
                            a11, a12, a21, a22, m11, m12, m22, c1, c2,
                            q11, q12, q22, l2_base, e_weight, s11sq, s22sq,
                            statedep_p, const_chi)
            out[k, 0] = p11 + h * k1[0]
            out[k, 1] = p12 + h * k1[1]
            out[k, 2] = p22 + h * k1[2]
            out[k, 3] = f1 + h * k1[3]
            out[k, 4] = f2 + h * k1[4]
            out[k, 5] = ch + h * k1[5]
        m = 0.0
        for j in range(6):
            v = abs(out[k, j])
            if v > m:
                m = v
        if not (m <= guard):
            return k
    return -1


@njit(cache=True)
def population_sweep(out, m_seq, b_seq, dt, noise, noise_mode,
                     s11, s22, noise_scale, x_lo, x_hi, imp_map, imp_values,
                     imp_mode, nonlin, kslope, kconst):
    steps = out.shape[0] - 1
    n = out.shape[1]
    for k in range(steps):
        mm11 = m_seq[k, 0, 0]
        mm12 = m_seq[k, 0, 1]
        mm21 = m_seq[k, 1, 0]
        mm22 = m_seq[k, 1, 1]
        b1 = b_seq[k, 0]
        b2 = b_seq[k, 1]
        row = imp_map[k + 1]
        for i in range(n):
            x = out[k, i, 0]
            y = out[k, i, 1]
            if nonlin == 1:
                fx = mm11 * x + (kslope * x + kconst) * y + b1
            else:
                fx = mm11 * x + mm12 * y + b1
            fy = mm21 * x + mm22 * y + b2
            nx = x + dt * fx
            ny = y + dt * fy
            if noise_mode == 1:
                nx = nx + noise_scale * s11 * noise[k, i, 0]
                ny = ny + noise_scale * s22 * noise[k, i, 1]
            elif noise_mode == 2:
                nx = nx + noise_scale * s11 * x * noise[k, i, 0]
                ny = ny + noise_scale * s22 * y * noise[k, i, 1]
            if nx < x_lo:
                nx = x_lo
            elif nx > x_hi:
                nx = x_hi
            if ny < 0.0:
                ny = 0.0
            elif ny > 1.0:
                ny = 1.0
            if row >= 0:
                if imp_mode == 0:
                    nx = nx + imp_values[row, i, 0]
                    ny = ny + imp_values[row, i, 1]
                else:
                    nx = imp_values[row, i, 0]
                    ny = imp_values[row, i, 1]
                if nx < x_lo:
                    nx = x_lo
                elif nx > x_hi:
                    nx = x_hi
                if ny < 0.0:
                    ny = 0.0
                elif ny > 1.0:
                    ny = 1.0
            out[k + 1, i, 0] = nx
            out[k + 1, i, 1] = ny
