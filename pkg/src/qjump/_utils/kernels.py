"""Compiled stepping loops for single trajectories.

The kernels are resumable: they consume uniform draws and event slots from
caller-owned buffers and return a status code when either runs out, along
with the full loop state, so the Python driver can refill and call again.
Results therefore do not depend on the buffer sizes.
"""

import numpy as np
from numba import njit

GRID_DONE = 0
NEED_DRAWS = 1
NEED_EVENTS = 2
DIVERGED = 3
VACUUM = 4

DRAWS_PER_STEP = 2
MAX_COUNT = 1000


@njit(cache=True, nogil=True)
def abs2(z):
    return z.real * z.real + z.imag * z.imag


@njit(cache=True, nogil=True)
def laser_propagate(alpha, t, kappa, omega):
    decay = np.exp(-0.5 * kappa * t)
    return decay * alpha + (-1j * omega / kappa) * (1.0 - decay)


@njit(cache=True, nogil=True)
def emission_probability(n_start, n_mid, h, laser, kappa):
    """Probability of an emission within a step of length h."""
    if laser:
        # midpoint rate of the driven no-jump evolution
        return -np.expm1(-kappa * n_mid * h)
    # exact for pure decay
    return -np.expm1(n_start * np.expm1(-kappa * h))


@njit(cache=True, nogil=True)
def emission_offset(u, n_start, n_mid, h, laser, kappa):
    """
    Time of the emission within a step, given the draw u < emission_probability.

    Inverts 1 - P0(s) = u with the same rate model as emission_probability,
    so the offset is distributed as the emission time conditioned on one
    emission in the step.
    """
    if laser:
        s = -np.log1p(-u) / (kappa * n_mid)
    else:
        s = -np.log1p(np.log1p(-u) / n_start) / kappa
    if s > h:
        s = h
    return s


@njit(cache=True, nogil=True)
def poisson_count(u, lam):
    """
    Largest k with u < P(K >= k) for K ~ Poisson(lam), 0 if there is none.

    k >= 1 exactly when u < 1 - exp(-lam), the emission_probability of the
    driven step, so the first emission is decided by the same draw.
    """
    if lam <= 0.0:
        return 0
    pmf = np.exp(-lam)
    tail = -np.expm1(-lam)
    k = 0
    while u < tail and k < MAX_COUNT:
        k += 1
        pmf *= lam / k
        tail -= pmf
    return k


@njit(cache=True, nogil=True)
def detected_count(u, k, eta):
    """Largest d with u < P(D >= d) for D ~ Binomial(k, eta)."""
    if k == 1:
        return 1 if u < eta else 0
    if k == 0 or eta <= 0.0:
        return 0
    if eta >= 1.0:
        return k
    pmf = (1.0 - eta) ** k
    tail = 1.0 - pmf
    ratio = eta / (1.0 - eta)
    d = 0
    while d < k and u < tail:
        d += 1
        pmf *= ratio * (k - d + 1) / d
        tail -= pmf
    return d


@njit(cache=True, nogil=True)
def fixed_step_kernel(
    t,
    alpha,
    gi,
    grid,
    out_alpha,
    alpha0,
    laser,
    kappa,
    omega,
    eta,
    beta,
    dt,
    budget,
    cap,
    draws,
    pos,
    ev_t,
    ev_det,
    n_ev,
):
    n_grid = grid.shape[0]
    while gi < n_grid:
        t_target = grid[gi]
        while t < t_target:
            if pos + DRAWS_PER_STEP > draws.shape[0]:
                return NEED_DRAWS, t, alpha, gi, pos, n_ev

            n = abs2(alpha)
            h = dt
            limit = budget / (kappa * max(1.0, n))
            if limit < h:
                h = limit
            if t_target - t <= h:
                h = t_target - t
                t_new = t_target
            else:
                t_new = t + h

            if laser:
                n_mid = abs2(laser_propagate(alpha0, t + 0.5 * h, kappa, omega))
                alpha_new = laser_propagate(alpha0, t_new, kappa, omega)
            else:
                n_mid = n
                alpha_new = alpha * np.exp(-0.5 * kappa * h)

            u_emit = draws[pos]
            if laser:
                # emissions leave the driven state unchanged: count all of them
                k = poisson_count(u_emit, kappa * n_mid * h)
            elif u_emit < emission_probability(n, n_mid, h, laser, kappa):
                k = 1
            else:
                k = 0
            if n_ev + k > ev_t.shape[0]:
                return NEED_EVENTS, t, alpha, gi, pos, n_ev
            u_det = draws[pos + 1]
            pos += DRAWS_PER_STEP

            if k > 0:
                d = detected_count(u_det, k, eta)
                ev_t[n_ev] = t + emission_offset(u_emit, n, n_mid, h, laser, kappa)
                for j in range(k):
                    if j > 0:
                        ev_t[n_ev + j] = t_new
                    ev_det[n_ev + j] = j < d
                n_ev += k
                if d > 0 and not laser:
                    alpha_new = alpha_new + beta

            t = t_new
            alpha = alpha_new
            if abs2(alpha) > cap:
                return DIVERGED, t, alpha, gi, pos, n_ev
            if not laser and alpha == 0:
                return VACUUM, t, alpha, gi, pos, n_ev

        out_alpha[gi] = alpha
        gi += 1
    return GRID_DONE, t, alpha, gi, pos, n_ev


@njit(cache=True, nogil=True)
def waiting_time_kernel(
    t,
    alpha,
    gi,
    grid,
    out_alpha,
    kappa,
    eta,
    beta,
    cap,
    draws,
    pos,
    ev_t,
    ev_det,
    n_ev,
):
    n_grid = grid.shape[0]
    while True:
        if pos + DRAWS_PER_STEP > draws.shape[0]:
            return NEED_DRAWS, t, alpha, gi, pos, n_ev
        if n_ev >= ev_t.shape[0]:
            return NEED_EVENTS, t, alpha, gi, pos, n_ev

        # u on (0, 1]
        u = 1.0 - draws[pos]
        u_det = draws[pos + 1]
        pos += DRAWS_PER_STEP

        n = abs2(alpha)
        log_u = np.log(u)
        if n == 0.0 or log_u <= -n:
            while gi < n_grid:
                out_alpha[gi] = alpha * np.exp(-0.5 * kappa * (grid[gi] - t))
                gi += 1
            return VACUUM, t, alpha, gi, pos, n_ev

        t_emit = t + (-np.log1p(log_u / n) / kappa)
        while gi < n_grid and grid[gi] < t_emit:
            out_alpha[gi] = alpha * np.exp(-0.5 * kappa * (grid[gi] - t))
            gi += 1
        if gi >= n_grid:
            return GRID_DONE, t, alpha, gi, pos, n_ev

        alpha = alpha * np.exp(-0.5 * kappa * (t_emit - t))
        t = t_emit
        detected = u_det < eta
        ev_t[n_ev] = t
        ev_det[n_ev] = detected
        n_ev += 1
        if detected:
            alpha = alpha + beta
            if abs2(alpha) > cap:
                return DIVERGED, t, alpha, gi, pos, n_ev
