"""Pure-Python chain kernel on gmpy2 (multiprecision) and numpy (double).

The compiled kernel in ``_ckernel.pyx`` performs the same MPFR operations in
the same order, so both backends return bit-identical results.

Notation: ``c[k] = (J/w) g_k`` for ``k = 0..R``; ``u_i = sum_j c[|i-j|] m_j``
including forced sites; ``T(x) = sum_a p_a tanh(x + H_a)``. A fixed point
satisfies ``m_i = T(u_i + h)``.
"""

from __future__ import annotations

import math

import gmpy2
import numpy as np

from ._kernel_common import KernelResult, KernelState, boundary_weights

MAX_SCALAR_ITERS = 20000
MAX_HALVINGS = 40


class PyKernel:
    """Chain operations for one model at a fixed number of bits.

    Parameters
    ----------
    coeffs : list of mpfr
        ``c[0..R]``.
    J : mpfr
    pairs : list of (H, p)
        Field values and probabilities; ``[(0, 1)]`` for the plain chain.
    n : int
        Number of core sites.
    forced : bool
        Forced boundary blocks of ``R`` sites on each side.
    bits : int
        MPFR precision.
    random_field : bool
        Use the averaged map and solve the field equation each sweep,
        even when all ``H`` vanish.
    """

    backend = "python"

    def __init__(self, coeffs, J, pairs, n, forced, bits, random_field=False):
        self.bits = int(bits)
        self.n = int(n)
        self.R = len(coeffs) - 1
        self.forced = bool(forced)
        with self._ctx():
            self.c = [gmpy2.mpfr(x) for x in coeffs]
            self.J = gmpy2.mpfr(J)
            self.H = [gmpy2.mpfr(H) for H, _ in pairs]
            self.p = [gmpy2.mpfr(p) for _, p in pairs]
            self.wl, self.wr = boundary_weights(self.c, self.n)
            self.plain = not random_field
            self.eps = gmpy2.mul_2exp(gmpy2.mpfr(1), 1 - self.bits)
            self.hmax = max(abs(H) for H in self.H)
        self.cd = np.array([float(x) for x in self.c])
        self.wld = np.array([float(x) for x in self.wl])
        self.wrd = np.array([float(x) for x in self.wr])
        self.Hd = np.array([float(x) for x in self.H])
        self.pd = np.array([float(x) for x in self.p])

    def _ctx(self):
        return gmpy2.context(precision=self.bits)

    # --- scalar pieces -----------------------------------------------------

    def _T(self, x):
        if self.plain:
            t = gmpy2.tanh(x)
            return t, 1 - t * t
        t = gmpy2.mpfr(0)
        dt = gmpy2.mpfr(0)
        for H, p in zip(self.H, self.p):
            th = gmpy2.tanh(x + H)
            t = t + p * th
            dt = dt + p * (1 - th * th)
        return t, dt

    def _fixed_point(self, h, start, sign):
        """Extreme stable root of ``m = T(J m + h)``; see ``single.stable_fixed_point``."""
        tol = 64 * self.eps
        small = gmpy2.mpfr("1e-3")
        m = start
        prev = None
        for _ in range(MAX_SCALAR_ITERS):
            t, dt = self._T(self.J * m + h)
            f = m - t
            slope = 1 - self.J * dt
            if abs(f) <= tol:
                return m
            step = -f
            if prev is not None and abs(step) < small and slope > 0:
                newton = -f / slope
                if abs(newton) <= 2 * abs(prev):
                    step = newton
            m_new = m + step
            if m_new > 1:
                m_new = gmpy2.mpfr(1)
            elif m_new < -1:
                m_new = gmpy2.mpfr(-1)
            if m_new == m:
                return m
            prev = step
            m = m_new
        raise ArithmeticError("boundary fixed point did not converge")

    def boundary(self, h, m_left=None, m_right=None):
        """Forced values ``(m_-(h), m_+(h))``, warm-started when given."""
        with self._ctx():
            h = gmpy2.mpfr(h)
            lo = self._fixed_point(h, gmpy2.mpfr(-1 if m_left is None else m_left), -1)
            hi = self._fixed_point(h, gmpy2.mpfr(1 if m_right is None else m_right), 1)
            return lo, hi

    def _slope(self, m, h):
        _, dt = self._T(self.J * m + h)
        return dt / (1 - self.J * dt)

    # --- vector pieces -----------------------------------------------------

    def _conv(self, m, ml, mr):
        c, R, n = self.c, self.R, self.n
        u = []
        for i in range(n):
            acc = c[0] * m[i]
            for k in range(1, R + 1):
                if i - k >= 0:
                    acc = acc + c[k] * m[i - k]
                if i + k < n:
                    acc = acc + c[k] * m[i + k]
            if self.forced:
                acc = acc + self.wl[i] * ml
                acc = acc + self.wr[i] * mr
            u.append(acc)
        return u

    def _solve_field(self, u, target, h0):
        """Root ``X`` of ``sum_i T(u_i + X) = n target`` (bracketed Newton)."""
        n = self.n
        goal = target * n
        span = self.J + self.hmax + 2
        lo, hi = -span, span

        def f(x):
            s = gmpy2.mpfr(0)
            ds = gmpy2.mpfr(0)
            for ui in u:
                t, dt = self._T(ui + x)
                s = s + t
                ds = ds + dt
            return s - goal, ds

        while f(lo)[0] > 0:
            lo = 2 * lo
        while f(hi)[0] < 0:
            hi = 2 * hi
        x = h0
        if not lo < x < hi:
            x = (lo + hi) / 2
        tol = 64 * self.eps * n
        for _ in range(4 * self.bits + 100):
            val, der = f(x)
            if val > 0:
                hi = x
            else:
                lo = x
            if abs(val) <= tol:
                return x
            x_new = x - val / der if der > 0 else (lo + hi) / 2
            if not lo < x_new < hi:
                x_new = (lo + hi) / 2
            if x_new == x:
                return x
            x = x_new
        raise ArithmeticError("field equation did not converge")

    # --- Picard iteration ----------------------------------------------------

    def picard(self, state: KernelState, target, theta, delta, max_iters, margin, history=False):
        """Damped fixed-point iteration of the chain equations.

        With ``target`` set, ``h`` is re-chosen every sweep so that the mean
        of the new profile equals ``target``; otherwise ``h`` stays fixed.
        """
        with self._ctx():
            n = self.n
            m = [gmpy2.mpfr(x) for x in state.m]
            h = gmpy2.mpfr(state.h)
            ml = None if state.m_left is None else gmpy2.mpfr(state.m_left)
            mr = None if state.m_right is None else gmpy2.mpfr(state.m_right)
            theta = gmpy2.mpfr(theta)
            omt = 1 - theta
            delta = gmpy2.mpfr(delta)
            tgt = None if target is None else gmpy2.mpfr(target)
            a = self.c[0] - 1
            top = 1 - gmpy2.mpfr(margin)
            clamps = 0
            steps = []
            step = gmpy2.mpfr("inf")
            it = 0
            converged = False
            while it < max_iters:
                it += 1
                u = self._conv(m, ml, mr)
                new = []
                if self.plain:
                    base = []
                    sb = gmpy2.mpfr(0)
                    sm = gmpy2.mpfr(0)
                    for i in range(n):
                        mi = m[i]
                        mc = mi
                        if mc > top:
                            mc = top
                            clamps += 1
                        elif mc < -top:
                            mc = -top
                            clamps += 1
                        b = gmpy2.atanh(mc) - mi
                        b = b - (u[i] - self.c[0] * mi)
                        base.append(b)
                        sb = sb + b
                        sm = sm + mi
                    if tgt is not None:
                        h = sb / n - a * (tgt - theta * (sm / n)) / omt
                    for i in range(n):
                        d = (base[i] - h) / a
                        new.append(theta * m[i] + omt * d)
                else:
                    if tgt is not None:
                        h = self._solve_field(u, tgt, h)
                    for i in range(n):
                        t, _ = self._T(u[i] + h)
                        d = (self.c[0] * m[i] - t) / a
                        new.append(theta * m[i] + omt * d)
                step = gmpy2.mpfr(0)
                for i in range(n):
                    step = step + abs(new[i] - m[i])
                m = new
                if self.forced:
                    ml = self._fixed_point(h, ml, -1)
                    mr = self._fixed_point(h, mr, 1)
                if history:
                    steps.append(float(step))
                if step < delta:
                    converged = True
                    break
            out = KernelState(m, h, ml, mr)
            return KernelResult(out, it, float(step), converged, clamps, steps)

    # --- Newton iteration ----------------------------------------------------

    def _residual_vec(self, m, h, ml, mr):
        u = self._conv(m, ml, mr)
        F = []
        dT = []
        for i in range(self.n):
            t, dt = self._T(u[i] + h)
            F.append(m[i] - t)
            dT.append(dt)
        return F, dT

    def residual(self, state: KernelState) -> float:
        """``max_i |m_i - T(u_i + h)|`` over core sites."""
        with self._ctx():
            F, _ = self._residual_vec(state.m, gmpy2.mpfr(state.h), state.m_left, state.m_right)
            worst = gmpy2.mpfr(0)
            for f in F:
                if abs(f) > worst:
                    worst = abs(f)
            return worst

    def residual_vector(self, state: KernelState) -> list:
        """Per-site ``m_i - T(u_i + h)``."""
        with self._ctx():
            F, _ = self._residual_vec(state.m, gmpy2.mpfr(state.h), state.m_left, state.m_right)
            return F

    def _band_solve(self, dT, rhs):
        """Solve ``(I - diag(dT) C) X = rhs`` for a list of right-hand sides.

        Banded Gaussian elimination with partial pivoting. Row ``i`` is
        stored over columns ``i-R .. i+2R`` to hold pivoting fill-in.
        """
        n, R, c = self.n, self.R, self.c
        W = 3 * R + 1
        zero = gmpy2.mpfr(0)
        rows = []
        for i in range(n):
            row = [zero] * W
            for j in range(max(0, i - R), min(n, i + R + 1)):
                v = -(dT[i] * c[abs(i - j)])
                if i == j:
                    v = v + 1
                row[j - i + R] = v
            rows.append(row)
        b = [list(col) for col in zip(*rhs)]  # b[i][r]
        nr = len(rhs)
        for j in range(n):
            p = j
            best = abs(rows[j][R])
            for i in range(j + 1, min(n, j + R + 1)):
                v = abs(rows[i][j - i + R])
                if v > best:
                    best = v
                    p = i
            if gmpy2.is_zero(best):
                raise ZeroDivisionError("singular chain Jacobian")
            hi_col = min(n - 1, j + 2 * R)
            if p != j:
                rj, rp = rows[j], rows[p]
                for col in range(j, hi_col + 1):
                    kj = col - j + R
                    kp = col - p + R
                    rj[kj], rp[kp] = rp[kp], rj[kj]
                b[j], b[p] = b[p], b[j]
            pivot = rows[j][R]
            for i in range(j + 1, min(n, j + R + 1)):
                ri = rows[i]
                lij = ri[j - i + R]
                if gmpy2.is_zero(lij):
                    continue
                l = lij / pivot
                ri[j - i + R] = zero
                rj = rows[j]
                for col in range(j + 1, hi_col + 1):
                    ri[col - i + R] = ri[col - i + R] - l * rj[col - j + R]
                bi, bj = b[i], b[j]
                for r in range(nr):
                    bi[r] = bi[r] - l * bj[r]
        x = [[zero] * nr for _ in range(n)]
        for j in range(n - 1, -1, -1):
            rj = rows[j]
            acc = list(b[j])
            for col in range(j + 1, min(n - 1, j + 2 * R) + 1):
                v = rj[col - j + R]
                xc = x[col]
                for r in range(nr):
                    acc[r] = acc[r] - v * xc[r]
            for r in range(nr):
                acc[r] = acc[r] / rj[R]
            x[j] = acc
        return [[x[i][r] for i in range(n)] for r in range(nr)]

    def _merit(self, F, G):
        worst = abs(G) if G is not None else gmpy2.mpfr(0)
        for f in F:
            if abs(f) > worst:
                worst = abs(f)
        return worst

    def newton(self, state: KernelState, target, tol, max_iters):
        """Newton's method on ``(m, h)`` (``h`` held fixed when ``target`` is None).

        The bordered system is reduced to two banded solves. Steps are halved
        until the largest residual decreases.
        """
        with self._ctx():
            n = self.n
            m = [gmpy2.mpfr(x) for x in state.m]
            h = gmpy2.mpfr(state.h)
            ml = None if state.m_left is None else gmpy2.mpfr(state.m_left)
            mr = None if state.m_right is None else gmpy2.mpfr(state.m_right)
            tgt = None if target is None else gmpy2.mpfr(target)
            tol = gmpy2.mpfr(tol)
            F, dT = self._residual_vec(m, h, ml, mr)
            G = None if tgt is None else sum(m, gmpy2.mpfr(0)) / n - tgt
            merit = self._merit(F, G)
            step = gmpy2.mpfr("inf")
            it = 0
            converged = False
            history = []
            while it < max_iters:
                it += 1
                rhs = [[-f for f in F]]
                if tgt is not None:
                    col = []
                    if self.forced:
                        sl = self._slope(ml, h)
                        sr = self._slope(mr, h)
                    for i in range(n):
                        e = gmpy2.mpfr(1)
                        if self.forced:
                            e = e + self.wl[i] * sl
                            e = e + self.wr[i] * sr
                        col.append(-(dT[i] * e))
                    rhs.append(col)
                sol = self._band_solve(dT, rhs)
                dm = sol[0]
                dh = gmpy2.mpfr(0)
                if tgt is not None:
                    y = sol[1]
                    rx = sum(dm, gmpy2.mpfr(0)) / n
                    ry = sum(y, gmpy2.mpfr(0)) / n
                    dh = (rx + G) / ry
                    dm = [dm[i] - dh * y[i] for i in range(n)]
                step = abs(dh)
                for d in dm:
                    step = step + abs(d)
                alpha = gmpy2.mpfr(1)
                accepted = False
                for _ in range(MAX_HALVINGS):
                    m_try = [m[i] + alpha * dm[i] for i in range(n)]
                    h_try = h + alpha * dh
                    if all(abs(v) < 1 for v in m_try):
                        ml_try, mr_try = ml, mr
                        if self.forced and tgt is not None:
                            ml_try = self._fixed_point(h_try, ml, -1)
                            mr_try = self._fixed_point(h_try, mr, 1)
                        F_try, dT_try = self._residual_vec(m_try, h_try, ml_try, mr_try)
                        G_try = None if tgt is None else sum(m_try, gmpy2.mpfr(0)) / n - tgt
                        merit_try = self._merit(F_try, G_try)
                        if merit_try < merit or step * alpha <= tol:
                            accepted = True
                            break
                    alpha = alpha / 2
                if not accepted:
                    break
                m, h, ml, mr = m_try, h_try, ml_try, mr_try
                F, dT, G, merit = F_try, dT_try, G_try, merit_try
                history.append(float(step))
                if step <= tol:
                    converged = True
                    break
            out = KernelState(m, h, ml, mr)
            return KernelResult(out, it, float(step), converged, 0, history)

    # --- double precision warm-up -------------------------------------------

    def _T_double(self, x):
        if self.plain:
            t = np.tanh(x)
            return t, 1 - t * t
        th = np.tanh(np.add.outer(x, self.Hd))
        return th @ self.pd, (1 - th * th) @ self.pd

    def _fixed_point_double(self, h, start):
        m = start
        J = float(self.J)
        prev = None
        for _ in range(MAX_SCALAR_ITERS):
            t, dt = self._T_double(np.array([J * m + h]))
            f = m - t[0]
            slope = 1 - J * dt[0]
            if abs(f) <= 1e-15:
                return m
            step = -f
            if prev is not None and abs(step) < 1e-3 and slope > 0:
                newton = -f / slope
                if abs(newton) <= 2 * abs(prev):
                    step = newton
            m_new = min(1.0, max(-1.0, m + step))
            if m_new == m:
                return m
            prev = step
            m = m_new
        raise ArithmeticError("boundary fixed point did not converge")

    def picard_double(self, m, h, ml, mr, target, theta, delta, max_iters):
        """Double-precision version of :meth:`picard`; returns ``(m, h, ml, mr, iters, step)``."""
        n, R = self.n, self.R
        m = np.array(m, dtype=float)
        kern = np.concatenate([self.cd[:0:-1], self.cd])
        c0 = self.cd[0]
        a = c0 - 1
        omt = 1 - theta
        top = 1 - 1e-15
        step = math.inf
        pad = np.zeros(R)
        it = 0
        while it < max_iters:
            it += 1
            full = np.concatenate([pad, m, pad])
            u = np.convolve(full, kern, mode="valid")
            if self.forced:
                u = u + self.wld * ml + self.wrd * mr
            if self.plain:
                base = np.arctanh(np.clip(m, -top, top)) - m - (u - c0 * m)
                if target is not None:
                    h = base.mean() - a * (target - theta * m.mean()) / omt
                new = theta * m + omt * (base - h) / a
            else:
                if target is not None:
                    h = self._field_double(u, target, h)
                t, _ = self._T_double(u + h)
                new = theta * m + omt * (c0 * m - t) / a
            step = float(np.abs(new - m).sum())
            m = new
            if self.forced:
                ml = self._fixed_point_double(h, ml)
                mr = self._fixed_point_double(h, mr)
            if not np.isfinite(step):
                break
            if step < delta:
                break
        return m, h, ml, mr, it, step

    def _field_double(self, u, target, h):
        lo, hi = -64.0, 64.0
        x = h
        for _ in range(200):
            t, dt = self._T_double(u + x)
            val = t.sum() - target * self.n
            if val > 0:
                hi = x
            else:
                lo = x
            der = dt.sum()
            x_new = x - val / der if der > 0 else 0.5 * (lo + hi)
            if not lo < x_new < hi:
                x_new = 0.5 * (lo + hi)
            if abs(x_new - x) <= 1e-16 * (1 + abs(x)):
                return x_new
            x = x_new
        return x
