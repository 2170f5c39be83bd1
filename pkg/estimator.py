"""Penalized likelihood and blockwise coordinate ascent for crossed grouped effects.

A sweep updates, in this order: the regression block (beta, psi), the common
location of the effects (K >= 2), then for each way k the group effects
alpha_k one at a time (g ascending), all of alpha_k jointly, and finally the
level assignments gamma_k (levels ascending). Updates within a way are Gauss-Seidel:
each one sees the newest values of the blocks before it, so the order is part
of the result and must not change.

Penalty for K ways, with S_k the level-average of assigned effects of way k:

    Pen = lambda/2 * sum_{k<K} (S_k - S_{k+1})^2

Holding everything but a_{k,g} fixed, S_k = c*a + R_k with c = n_{k,g}/n_k
(n_{k,g} = levels assigned to g). Each chain term touching way k contributes
(c*a + R_k - S_t)^2 for neighbour t, so on the N-scaled objective the block
penalty is (w_k*lambda*N*c^2)/2 * (a - center)^2 + const, where w_k is the
number of neighbours (1 at the ends of the chain, 2 inside) and
center = (mean_t S_t - R_k) / c. For K=2 this is exactly the two-way update
with weight n_g^2*lambda*m/n.
"""
import logging

import numpy as np
from scipy import linalg, special

from dataset import check_full_rank
from errors import (CGEError, ConfigError, EstimationError, FitAbortedError,
                    NoProgressError, RankDeficiencyError)
from families import FamilySpec, get_family
from models import FitConfig, FittedModel, FitWarnings

logger = logging.getLogger(__name__)

# Allowed decrease of Q between consecutive sweeps before it is reported
MONOTONE_SLACK = 1e-10

# psi floor for interpolating gaussian fits
PSI_FLOOR = 1e-12

# Largest score left after the no-effects ordered fit, per sqrt(N)
NULL_FIT_GRAD_TOL = 1e-6


def damped_newton(objective, derivatives, x0, max_iter=50, max_halvings=30, grad_tol=1e-10, what='parameters'):
    """Maximize a concave objective by Newton steps, halving until it does not decrease.

    `derivatives(x)` returns (gradient, hessian) or an ascent-preserving
    negative definite approximation of the hessian.
    """
    x = np.array(x0, dtype=float, copy=True)
    f = objective(x)
    for _ in range(max_iter):
        grad, hess = derivatives(x)
        if np.max(np.abs(grad), initial=0.0) <= grad_tol:
            break
        try:
            step = linalg.solve(-hess, grad, assume_a='sym')
        except (linalg.LinAlgError, ValueError) as e:
            raise RankDeficiencyError(f"Singular Hessian while updating {what}: {e}") from e
        if not np.all(np.isfinite(step)):
            raise RankDeficiencyError(f"Singular Hessian while updating {what}")
        t = 1.0
        for _ in range(max_halvings + 1):
            candidate = x + t * step
            f_new = objective(candidate)
            if np.isfinite(f_new) and f_new >= f:
                break
            t *= 0.5
        else:
            decrement = float(grad @ step)
            # Remaining ascent is below the rounding noise of the objective
            if decrement <= 1e-12 * max(1.0, abs(f)):
                break
            raise NoProgressError(
                f"Step halving exhausted while updating {what}",
                diagnostics={'objective': float(f), 'grad_norm': float(np.max(np.abs(grad))),
                             'newton_decrement': decrement, 'halvings': max_halvings})
        moved = np.max(np.abs(t * step), initial=0.0)
        x, f = candidate, f_new
        if moved <= 1e-12 * (1.0 + np.max(np.abs(x), initial=0.0)):
            break
    return x, f


# --- Objective ---

def linear_predictor(model, ds, skip_way=None):
    """x'beta plus assigned effects of every way except `skip_way`"""
    eta = ds.X @ model.beta if ds.p else np.zeros(ds.N)
    for k in range(ds.K):
        if k != skip_way:
            eta = eta + model.alpha[k][model.gamma[k][ds.codes[k]]]
    return eta


def way_means(alpha, gamma):
    """Level-average of assigned effects per way"""
    return np.array([a[g].mean() for a, g in zip(alpha, gamma)])


def penalty(alpha, gamma, lambda_, ds=None):
    if ds is not None:
        for k, (g, n) in enumerate(zip(gamma, ds.n_levels)):
            if len(g) != n:
                raise ConfigError(f"Way {k + 1}: {len(g)} assignments for {n} levels")
    diffs = np.diff(way_means(alpha, gamma))
    return 0.5 * lambda_ * float(np.sum(diffs * diffs))


def log_likelihood(model, ds, eta=None, warnings=None):
    if eta is None:
        eta = linear_predictor(model, ds)
    family = get_family(ds.family)
    return float(np.sum(family.log_density(ds.y, eta, model.psi, warnings)))


def objective(state, ds, warnings=None):
    """Mean log density minus the location penalty"""
    return log_likelihood(state, ds, warnings=warnings) / ds.N \
        - penalty(state.alpha, state.gamma, state.lambda_, ds)


# --- Block updates ---

def update_regression(state, ds, cfg=None):
    """New (beta, psi) with the effects held as an offset"""
    cfg = cfg or FitConfig()
    family = get_family(ds.family)
    offset = linear_predictor(state, ds) - (ds.X @ state.beta if ds.p else 0.0)

    if ds.family.has_dispersion:
        resid = ds.y - offset
        beta = state.beta
        if ds.p:
            try:
                beta = linalg.solve(ds.X.T @ ds.X, ds.X.T @ resid, assume_a='pos')
            except linalg.LinAlgError as e:
                raise RankDeficiencyError(f"Normal equations are singular: {e}") from e
            resid = resid - ds.X @ beta
        psi = float(np.mean(resid * resid))
        if psi < PSI_FLOOR:
            logger.warning(f"⚠ Residual variance {psi:.3e} is degenerate, flooring at {PSI_FLOOR}")
            state.warnings.degenerate_dispersion += 1
            psi = PSI_FLOOR
        return beta, psi

    if ds.p == 0:
        return state.beta, 1.0

    X, y = ds.X, ds.y

    def loglik(b):
        return float(np.sum(family.log_density(y, X @ b + offset, 1.0, state.warnings)))

    def derivatives(b):
        eta = X @ b + offset
        return X.T @ family.d1(y, eta), X.T @ (family.d2(y, eta)[:, None] * X)

    beta, _ = damped_newton(loglik, derivatives, state.beta, max_iter=cfg.newton_steps,
                            max_halvings=cfg.max_halvings, what='beta')
    return beta, 1.0


def effect_penalty_target(state, ds, k, g):
    """(center, weight) of the quadratic penalty seen by a_{k,g}; see module docstring"""
    n_k = ds.n_levels[k]
    alpha_k, gamma_k = state.alpha[k], state.gamma[k]
    n_g = int(np.count_nonzero(gamma_k == g))
    neighbours = [k - 1, k + 1]
    neighbours = [t for t in neighbours if 0 <= t < ds.K]
    if n_g == 0 or not neighbours:
        return 0.0, 0.0
    c = n_g / n_k
    rest = (alpha_k[gamma_k].sum() - n_g * alpha_k[g]) / n_k
    target = np.mean([state.alpha[t][state.gamma[t]].mean() for t in neighbours])
    center = (target - rest) / c
    weight = state.lambda_ * ds.N * len(neighbours) * c * c
    return float(center), float(weight)


def update_group_effect(state, ds, k, g, cfg=None, offset=None):
    """Maximizer of the group's log likelihood minus its quadratic penalty"""
    cfg = cfg or FitConfig()
    current = float(state.alpha[k][g])
    if not np.any(state.gamma[k] == g):
        state.warnings.empty_groups += 1
        logger.debug(f"way {k + 1} group {g + 1} is empty, keeping {current:.6g}")
        return current

    members = np.flatnonzero(state.gamma[k][ds.codes[k]] == g)
    if offset is None:
        offset = linear_predictor(state, ds, skip_way=k)
    off, y = offset[members], ds.y[members]
    center, weight = effect_penalty_target(state, ds, k, g)

    if ds.family.has_dispersion:
        precision = 1.0 / state.psi
        return float((precision * np.sum(y - off) + weight * center) / (precision * len(members) + weight))

    family = get_family(ds.family)

    def block(a):
        return float(np.sum(family.log_density(y, off + a[0], 1.0, state.warnings))
                     - 0.5 * weight * (a[0] - center) ** 2)

    def derivatives(a):
        eta = off + a[0]
        grad = np.sum(family.d1(y, eta)) - weight * (a[0] - center)
        hess = np.sum(family.d2(y, eta)) - weight
        return np.array([grad]), np.array([[hess]])

    a, _ = damped_newton(block, derivatives, [current], max_iter=cfg.effect_newton_steps,
                         max_halvings=cfg.max_halvings, what=f'effect {g + 1} of way {k + 1}')
    return float(a[0])


def update_way_effects(state, ds, k, cfg=None, offset=None):
    """All non-empty effects of way k at once, penalty included.

    The block objective is sum_g ll_g(a_g) - (lambda*N/2) * sum_t (w'a - S_t)^2
    with w_g = n_{k,g}/n_k, so the hessian is diagonal plus a rank-one term.
    Moving groups against each other at a fixed way mean is slow one group
    at a time, since each scalar update is pinned by its penalty weight.
    """
    cfg = cfg or FitConfig()
    alpha_k = state.alpha[k].copy()
    G = len(alpha_k)
    w = np.bincount(state.gamma[k], minlength=G) / ds.n_levels[k]
    active = np.flatnonzero(w > 0)
    targets = np.array([state.alpha[t][state.gamma[t]].mean() for t in (k - 1, k + 1) if 0 <= t < ds.K])
    if offset is None:
        offset = linear_predictor(state, ds, skip_way=k)
    rows = state.gamma[k][ds.codes[k]]
    family = get_family(ds.family)
    scale = state.lambda_ * ds.N

    def expand(a):
        full = alpha_k.copy()
        full[active] = a
        return full

    def block(a):
        full = expand(a)
        gap = w @ full - targets
        return float(np.sum(family.log_density(ds.y, offset + full[rows], state.psi, state.warnings))
                     - 0.5 * scale * np.sum(gap * gap))

    def derivatives(a):
        full = expand(a)
        eta = offset + full[rows]
        d1 = np.bincount(rows, weights=family.d1(ds.y, eta, state.psi), minlength=G)[active]
        d2 = np.bincount(rows, weights=family.d2(ds.y, eta, state.psi), minlength=G)[active]
        wa = w[active]
        grad = d1 - scale * np.sum(w @ full - targets) * wa
        hess = np.diag(d2) - scale * len(targets) * np.outer(wa, wa)
        return grad, hess

    a, _ = damped_newton(block, derivatives, alpha_k[active], max_iter=cfg.effect_newton_steps,
                         max_halvings=cfg.max_halvings, what=f'effects of way {k + 1}')
    return expand(a)


def update_location(state, ds, cfg=None):
    """Best common shift of the linear predictor, spread as delta/K over every way.

    Every way mean moves by the same amount, so the penalty is unchanged and
    only the likelihood is maximized. Returns the shifted effect vectors.
    """
    cfg = cfg or FitConfig()
    eta = linear_predictor(state, ds)
    family = get_family(ds.family)
    if ds.family.has_dispersion:
        delta = float(np.mean(ds.y - eta))
    else:
        def block(d):
            return float(np.sum(family.log_density(ds.y, eta + d[0], state.psi, state.warnings)))

        def derivatives(d):
            shifted = eta + d[0]
            return (np.array([np.sum(family.d1(ds.y, shifted, state.psi))]),
                    np.array([[np.sum(family.d2(ds.y, shifted, state.psi))]]))

        d, _ = damped_newton(block, derivatives, [0.0], max_iter=cfg.effect_newton_steps,
                             max_halvings=cfg.max_halvings, what='common location')
        delta = float(d[0])
    return [a + delta / ds.K for a in state.alpha]


def level_log_likelihoods(state, ds, k, offset=None):
    """n_k x G_k matrix: summed log density of each level's rows under each group effect"""
    if offset is None:
        offset = linear_predictor(state, ds, skip_way=k)
    family = get_family(ds.family)
    alpha_k = state.alpha[k]
    ll = family.log_density(ds.y[:, None], offset[:, None] + alpha_k[None, :], state.psi, state.warnings)
    n_k = ds.n_levels[k]
    return np.column_stack([np.bincount(ds.codes[k], weights=ll[:, g], minlength=n_k)
                            for g in range(len(alpha_k))])


def update_assignments(state, ds, k, offset=None):
    """Reassign each level of way k to its best group, levels in ascending order"""
    alpha_k = state.alpha[k]
    n_k = ds.n_levels[k]
    if len(alpha_k) == 1:
        return np.zeros(n_k, dtype=np.int64)

    L = level_log_likelihoods(state, ds, k, offset)
    neighbours = [state.alpha[t][state.gamma[t]].mean() for t in (k - 1, k + 1) if 0 <= t < ds.K]
    scale = 0.5 * state.lambda_ * ds.N

    gamma = state.gamma[k].copy()
    total = float(alpha_k[gamma].sum())
    for i in range(n_k):
        # Way mean if level i moved to each candidate; earlier levels already carry new labels
        base = total - alpha_k[gamma[i]]
        means = (base + alpha_k) / n_k
        pen = np.zeros_like(means)
        for s in neighbours:
            pen += (means - s) ** 2
        score = L[i] - scale * pen
        best = int(np.argmax(score))
        gamma[i] = best
        total = base + alpha_k[best]
    return gamma


# --- Driver ---

def initialize(ds, counts, seed=0, init='quantile'):
    """Starting state from a null fit's per-level working residuals"""
    family = get_family(ds.family)
    eta0 = family.null_eta(ds.y)
    psi0 = max(float(np.var(ds.y)), PSI_FLOOR) if ds.family.has_dispersion else 1.0
    eta = np.full(ds.N, eta0)
    working = family.d1(ds.y, eta, psi0) / -family.d2(ds.y, eta, psi0)

    rng = np.random.default_rng(seed)
    alpha, gamma = [], []
    for k, (codes, n_k, G) in enumerate(zip(ds.codes, ds.n_levels, counts)):
        level_means = np.bincount(codes, weights=working, minlength=n_k) / np.bincount(codes, minlength=n_k)
        gamma_k = np.empty(n_k, dtype=np.int64)
        alpha_k = np.empty(G)
        if init == 'quantile':
            order = np.argsort(level_means, kind='stable')
            for g, members in enumerate(np.array_split(order, G)):
                gamma_k[members] = g
                alpha_k[g] = level_means[members].mean()
        else:
            gamma_k[:] = rng.integers(G, size=n_k)
            for g in range(G):
                hit = gamma_k == g
                alpha_k[g] = level_means[hit].mean() if hit.any() else level_means.mean()
        # Equal way means, so the starting penalty is zero
        alpha_k += eta0 / ds.K - alpha_k[gamma_k].mean()
        alpha.append(alpha_k)
        gamma.append(gamma_k)

    return FittedModel(
        family=ds.family,
        beta=np.zeros(ds.p),
        psi=psi0,
        alpha=alpha,
        gamma=gamma,
        lambda_=0.0,
        level_labels=[list(l) for l in ds.level_labels],
        way_names=list(ds.way_names),
        covariate_names=list(ds.covariate_names),
        response_name=ds.response_name,
        seed=seed,
    )


def sweep(state, ds, cfg, on_block=None, sweep_number=0):
    """One Gauss-Seidel pass over every block, updating `state` in place"""
    block = 'regression'
    try:
        if ds.p > 0 or ds.family.has_dispersion:
            state.beta, state.psi = update_regression(state, ds, cfg)
            if on_block:
                on_block(block, state)
        if ds.K > 1:
            block = 'location'
            state.alpha = update_location(state, ds, cfg)
            if on_block:
                on_block(block, state)
        for k in range(ds.K):
            offset = linear_predictor(state, ds, skip_way=k)
            for g in range(len(state.alpha[k])):
                block = f'effect[{k + 1},{g + 1}]'
                state.alpha[k][g] = update_group_effect(state, ds, k, g, cfg, offset=offset)
                if on_block:
                    on_block(block, state)
            if ds.K > 1 and len(state.alpha[k]) > 1:
                block = f'effects[{k + 1}]'
                state.alpha[k] = update_way_effects(state, ds, k, cfg, offset=offset)
                if on_block:
                    on_block(block, state)
            block = f'assignments[{k + 1}]'
            state.gamma[k] = update_assignments(state, ds, k, offset=offset)
            if on_block:
                on_block(block, state)
    except FitAbortedError:
        raise
    except CGEError as e:
        raise FitAbortedError(f"Fit aborted at sweep {sweep_number}, block {block}: {e}",
                              sweep=sweep_number, block=block) from e
    return state


def _parameters(state):
    return np.concatenate([state.beta, [state.psi], *state.alpha])


def _warm_state(start, ds, seed):
    """Copy of a previous fit to continue from, with fit bookkeeping reset"""
    if len(start.gamma) != ds.K or len(start.beta) != ds.p:
        raise ConfigError("Starting model does not match the data's ways or covariates")
    for k, (gamma, alpha, n_k) in enumerate(zip(start.gamma, start.alpha, ds.n_levels)):
        if len(gamma) != n_k or gamma.min() < 0 or gamma.max() >= len(alpha):
            raise ConfigError(f"Starting model does not match way {k + 1} of the data")
    state = start.copy()
    state.family = ds.family
    state.objective_trace = []
    state.converged = False
    state.sweeps = 0
    state.warnings = FitWarnings()
    state.seed = seed
    return state


def _fit_single(ds, cfg, counts, seed, init, on_block=None, start=None):
    if start is None:
        state = initialize(ds, counts, seed=seed, init=init)
    else:
        state = _warm_state(start, ds, seed)
    state.lambda_ = cfg.lambda_
    q = objective(state, ds, state.warnings)
    state.objective_trace = [q]
    for s in range(1, cfg.max_iter + 1):
        previous_gamma = [g.copy() for g in state.gamma]
        previous = _parameters(state)
        sweep(state, ds, cfg, on_block=on_block, sweep_number=s)
        q_new = objective(state, ds, state.warnings)
        state.objective_trace.append(q_new)
        state.sweeps = s
        if q_new < q - MONOTONE_SLACK * max(1.0, abs(q)):
            logger.warning(f"⚠ Objective decreased at sweep {s}: {q:.12g} -> {q_new:.12g}")
        gain = (q_new - q) / max(1.0, abs(q))
        stable = all(np.array_equal(a, b) for a, b in zip(previous_gamma, state.gamma))
        drift = float(np.max(np.abs(_parameters(state) - previous)))
        logger.debug(f"sweep {s}: Q={q_new:.12g} gain={gain:.3e} drift={drift:.3e} stable={stable}")
        q = q_new
        if gain < cfg.tol_obj or (stable and drift < cfg.tol_obj):
            state.converged = True
            break
    return state


def fit(ds, cfg=None, on_block=None, start=None):
    """Fit the crossed grouped-effects model; best of cfg.n_starts starts.

    With `start` (a previous FittedModel) a single run continues from its
    effects, assignments and beta instead, e.g. to refit under another lambda.
    """
    cfg = (cfg or FitConfig()).validate()
    if start is not None:
        counts = tuple(len(a) for a in start.alpha)
        if cfg.group_counts != 'auto' and cfg.resolve_group_counts(ds.n_levels) != counts:
            raise ConfigError(f"Starting model has groups {list(counts)}, config asks for {cfg.group_counts}")
    else:
        counts = cfg.resolve_group_counts(ds.n_levels)
    check_full_rank(ds)
    logger.info(f"Fitting {ds.family.kind} CGE model: N={ds.N}, p={ds.p}, levels={ds.n_levels}, "
                f"groups={counts}, lambda={cfg.lambda_}" + (" (warm start)" if start is not None else ""))
    best = None
    for run in range(1 if start is not None else cfg.n_starts):
        # Only the first start can use the deterministic quantile rule
        init = cfg.init if run == 0 else 'random'
        state = _fit_single(ds, cfg, counts, cfg.seed + run, init, on_block=on_block, start=start)
        logger.debug(f"start {run + 1}/{cfg.n_starts} ({init}): Q={state.objective:.12g} "
                     f"sweeps={state.sweeps} converged={state.converged}")
        if best is None or state.objective > best.objective:
            best = state
    if best.converged:
        logger.info(f"✓ Converged after {best.sweeps} sweeps, Q={best.objective:.10g}")
    else:
        logger.warning(f"⚠ Stopped at max_iter={cfg.max_iter} without converging, Q={best.objective:.10g}")
    return best


def recover_intercept(model, ds=None):
    """Sum over ways of the level-averaged assigned effects"""
    return float(np.sum(way_means(model.alpha, model.gamma)))


# --- Ordered probit thresholds ---

def _ordered_unpack(theta, n_cuts):
    cuts = theta[0] + np.concatenate([[0.0], np.cumsum(np.exp(theta[1:n_cuts]))])
    return cuts, theta[n_cuts:]


def fit_ordered_null(ds, n_categories, max_iter=100, max_halvings=30):
    """Thresholds and beta of the ordered probit model without effects.

    Thresholds are c_1 = t_0 and c_j = c_{j-1} + exp(t_{j-1}), so every step
    keeps them increasing. The Newton direction uses J'HJ (H the concave
    hessian in (c, beta)); the curvature of the exp map is dropped because it
    vanishes with the gradient at the optimum.
    """
    if n_categories < 2:
        raise EstimationError("An ordered response needs at least 2 categories")
    y = np.asarray(ds.y)
    if np.any(y != np.floor(y)) or y.min() < 1 or y.max() > n_categories:
        raise EstimationError(f"Ordered responses must lie in 1..{n_categories}")
    y = y.astype(np.int64)
    counts = np.bincount(y, minlength=n_categories + 1)[1:]
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        raise EstimationError(f"Category {absent[0] + 1} has no observations; thresholds are not identified")

    n_cuts = n_categories - 1
    X, N = ds.X, ds.N
    start_cuts = special.ndtri(np.cumsum(counts)[:-1] / N)
    theta0 = np.concatenate([[start_cuts[0]], np.log(np.diff(start_cuts)), np.zeros(ds.p)])

    has_upper = y <= n_cuts
    has_lower = y >= 2
    upper_idx = y[has_upper] - 1
    lower_idx = y[has_lower] - 2

    def pieces(theta):
        cuts, beta = _ordered_unpack(theta, n_cuts)
        if np.any(np.diff(cuts) <= 0):
            return None
        family = get_family(FamilySpec.ordered(cuts))
        eta = X @ beta if ds.p else np.zeros(N)
        return cuts, beta, family, eta

    def loglik(theta):
        parts = pieces(theta)
        if parts is None:
            return -np.inf
        _, _, family, eta = parts
        return float(np.sum(family.log_density(y, eta)))

    def derivatives(theta):
        cuts, beta, family, eta = pieces(theta)
        upper, lower, prob = family._guarded_probability(y, eta)
        A, B = family._pdf(upper), family._pdf(lower)
        uA, lB = family._x_pdf(upper), family._x_pdf(lower)
        a, b = A / prob, B / prob

        grad_c = np.zeros(n_cuts)
        np.add.at(grad_c, upper_idx, a[has_upper])
        np.add.at(grad_c, lower_idx, -b[has_lower])
        g_eta = b - a

        h_uu = -uA / prob - a * a
        h_ll = lB / prob - b * b
        h_ul = a * b
        h_ue = uA / prob - a * g_eta
        h_le = -lB / prob + b * g_eta
        h_ee = (lB - uA) / prob - g_eta * g_eta

        H_c = np.zeros((n_cuts, n_cuts))
        np.add.at(H_c, (upper_idx, upper_idx), h_uu[has_upper])
        np.add.at(H_c, (lower_idx, lower_idx), h_ll[has_lower])
        both = has_upper & has_lower
        iu, il = y[both] - 1, y[both] - 2
        np.add.at(H_c, (iu, il), h_ul[both])
        np.add.at(H_c, (il, iu), h_ul[both])

        H_cb = np.zeros((n_cuts, ds.p))
        if ds.p:
            np.add.at(H_cb, upper_idx, h_ue[has_upper, None] * X[has_upper])
            np.add.at(H_cb, lower_idx, h_le[has_lower, None] * X[has_lower])
        H_bb = X.T @ (h_ee[:, None] * X)

        jac = np.zeros((n_cuts, n_cuts))
        jac[:, 0] = 1.0
        for t in range(1, n_cuts):
            jac[t:, t] = np.exp(theta[t])
        grad = np.concatenate([jac.T @ grad_c, X.T @ g_eta])
        hess = np.block([[jac.T @ H_c @ jac, jac.T @ H_cb],
                         [H_cb.T @ jac, H_bb]])
        return grad, hess

    theta, _ = damped_newton(loglik, derivatives, theta0, max_iter=max_iter,
                             max_halvings=max_halvings, grad_tol=1e-9, what='ordered thresholds')
    grad, _ = derivatives(theta)
    grad_norm = float(np.max(np.abs(grad), initial=0.0))
    if grad_norm > NULL_FIT_GRAD_TOL * max(1.0, np.sqrt(N)):
        raise EstimationError(f"No-effects ordered probit did not converge in {max_iter} Newton steps "
                              f"(gradient {grad_norm:.3e})")
    cuts, beta = _ordered_unpack(theta, n_cuts)
    logger.info(f"✓ No-effects ordered probit: thresholds={np.round(cuts, 4).tolist()}")
    return cuts, beta
