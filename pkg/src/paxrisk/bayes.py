"""Bayesian shrinkage logistic regressions fit by Hamiltonian Monte Carlo.

Two prior hierarchies over the shared design matrix layout:

* normal variant: every non-spline coefficient ~ N(0, sigma_s^2), spline
  coefficients ~ N(0, sigma_a^2), with half-t(df=1) priors (truncated
  Cauchy) of scale 1.0 and 2.5 on sigma_s and sigma_a.
* lasso variant: the Laplace prior written as a normal-exponential scale
  mixture, N(0, sigma_s^2 * sigma_b^2) with sigma_b^2 ~ Exp(1), one local
  variance per singleton coefficient (sex, declaration, linear age) and
  one per categorical block and for the spline block.

Scales are sampled on the log scale with Jacobian corrections. The
sampler is plain HMC with dual-averaging step size, a diagonal mass
matrix estimated during warm-up, and a jittered fixed integration time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .schema import DesignMatrix, FeatureStage

LOG_2_PI = float(np.log(2.0 * np.pi))
DIVERGENCE_ENERGY = 1000.0


class BayesError(RuntimeError):
    pass


@dataclass(frozen=True)
class BayesSpec:
    """Variant and prior constants for one shrinkage regression."""

    variant: str                      # "normal" | "lasso"
    stage: FeatureStage = FeatureStage.STAGE12
    knots: int = 10
    scale_s: float = 1.0              # half-t1 scale for the shared coefficient scale
    scale_a: float = 2.5              # half-t1 scale for the spline-block scale
    exp_rate: float = 1.0             # Exp rate for lasso local variances
    intercept_variance: float = 10.0
    # When set (normal variant), sigma_s is held at this constant instead of
    # being sampled; with a large value the fit approaches the plain MLE.
    fixed_sigma_s: float | None = None

    def __post_init__(self):
        if self.variant not in ("normal", "lasso"):
            raise BayesError(f"unknown variant {self.variant!r}")
        if self.fixed_sigma_s is not None and self.variant != "normal":
            raise BayesError("fixed_sigma_s applies to the normal variant only")


_BLOCK_OF_SOURCE = {
    "sex": "m",
    "declaration_status": "d",
    "occupation": "o",
    "visit_reason": "v",
    "citizenship_group": "c",
}


@dataclass(frozen=True)
class ParamLayout:
    """Mapping between the unconstrained vector and model quantities.

    theta = [mu, coefficients (design order), log-scale parameters].
    """

    names: tuple[str, ...]
    n_coef: int
    spline_mask: np.ndarray           # (n_coef,) bool
    blocks: tuple[tuple[str, tuple[int, ...]], ...]  # lasso blocks
    variant: str
    fixed_sigma_s: float | None = None

    @property
    def n_params(self) -> int:
        return len(self.names)

    @property
    def n_scales(self) -> int:
        return self.n_params - self.n_coef - 1

    @staticmethod
    def from_design(design: DesignMatrix, variant: str,
                    fixed_sigma_s: float | None = None) -> "ParamLayout":
        spline_mask = np.zeros(design.p, dtype=bool)
        block_cols: dict[str, list[int]] = {}
        for j, col in enumerate(design.column_meta):
            if col.kind == "spline":
                spline_mask[j] = True
                block_cols.setdefault("a_spline", []).append(j)
            elif col.kind == "linear" and col.source == "age":
                block_cols.setdefault("a", []).append(j)
            else:
                block_cols.setdefault(_BLOCK_OF_SOURCE[col.source], []).append(j)
        order = [b for b in ("m", "d", "a", "o", "v", "c", "a_spline")
                 if b in block_cols]
        blocks = tuple((b, tuple(block_cols[b])) for b in order)
        names = ["mu"] + [f"b[{c.name}]" for c in design.column_meta]
        if variant == "normal":
            names += (["log_sigma_a"] if fixed_sigma_s is not None
                      else ["log_sigma_s", "log_sigma_a"])
        else:
            names += ["log_sigma_s"] + [f"log_s2[{b}]" for b, _ in blocks]
        return ParamLayout(names=tuple(names), n_coef=design.p,
                           spline_mask=spline_mask, blocks=blocks,
                           variant=variant, fixed_sigma_s=fixed_sigma_s)


def _softplus(x: float) -> float:
    return float(max(x, 0.0) + np.log1p(np.exp(-abs(x))))


def _log_half_cauchy_u(u: float, scale: float) -> tuple[float, float]:
    """log density of sigma = exp(u) under half-t1(0, scale) plus the log
    Jacobian, with its u-gradient; stable for any u."""
    t = 2.0 * (u - np.log(scale))
    value = np.log(2.0 / np.pi) - np.log(scale) - _softplus(t) + u
    grad = -2.0 / (1.0 + np.exp(-t)) + 1.0
    return float(value), float(grad)


def make_log_posterior(spec: BayesSpec, design: DesignMatrix, y):
    """Closure computing (log joint density, exact gradient) on the
    unconstrained scale, including Jacobians for the log-transformed
    scale parameters."""
    layout = ParamLayout.from_design(design, spec.variant, spec.fixed_sigma_s)
    X = design.values
    y = np.asarray(y, dtype=float)
    p = layout.n_coef
    spline = layout.spline_mask
    nonspline = ~spline
    v_mu = spec.intercept_variance

    def logp(theta: np.ndarray):
        if len(theta) != layout.n_params:
            raise BayesError(
                f"theta length {len(theta)} != {layout.n_params} for this layout")
        mu = theta[0]
        beta = theta[1: 1 + p]
        grad = np.zeros_like(theta)

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            eta = mu + X @ beta
            prob = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
            # log-likelihood: y*eta - softplus(eta), stable
            value = float(np.sum(y * eta - (np.maximum(eta, 0.0)
                                            + np.log1p(np.exp(-np.abs(eta))))))
            resid = y - prob
            grad[0] = resid.sum()
            grad[1: 1 + p] = X.T @ resid

            # Intercept prior N(0, v_mu) (variance parameterization).
            value += -0.5 * (LOG_2_PI + np.log(v_mu)) - mu * mu / (2.0 * v_mu)
            grad[0] += -mu / v_mu

            if spec.variant == "normal":
                if layout.fixed_sigma_s is None:
                    u_s, idx_s = theta[1 + p], 1 + p
                    u_a, idx_a = theta[2 + p], 2 + p
                else:
                    u_s, idx_s = float(np.log(layout.fixed_sigma_s)), None
                    u_a, idx_a = theta[1 + p], 1 + p
                for mask, u, u_idx, scale in ((nonspline, u_s, idx_s, spec.scale_s),
                                              (spline, u_a, idx_a, spec.scale_a)):
                    b = beta[mask]
                    m = int(mask.sum())
                    inv_v = np.exp(-2.0 * u)
                    value += -0.5 * m * (LOG_2_PI + 2.0 * u) \
                        - float(b @ b) * inv_v / 2.0
                    grad[1: 1 + p][mask] += -b * inv_v
                    if u_idx is not None:
                        grad[u_idx] += -m + float(b @ b) * inv_v
                        hc_val, hc_grad = _log_half_cauchy_u(u, scale)
                        value += hc_val
                        grad[u_idx] += hc_grad
            else:
                u_s = theta[1 + p]
                hc_val, hc_grad = _log_half_cauchy_u(u_s, spec.scale_s)
                value += hc_val
                grad[1 + p] += hc_grad
                for bi, (_, cols) in enumerate(layout.blocks):
                    v_idx = 2 + p + bi
                    v_b = theta[v_idx]               # log sigma_b^2
                    vb = np.exp(v_b)
                    b = beta[np.array(cols)]
                    m = len(cols)
                    inv_var = np.exp(-2.0 * u_s - v_b)
                    value += -0.5 * m * (LOG_2_PI + 2.0 * u_s + v_b) \
                        - float(b @ b) * inv_var / 2.0
                    for c in cols:
                        grad[1 + c] += -beta[c] * inv_var
                    grad[1 + p] += -m + float(b @ b) * inv_var
                    grad[v_idx] += -0.5 * m + float(b @ b) * inv_var / 2.0
                    # Exp(rate) prior on sigma_b^2 with log-variance Jacobian.
                    value += np.log(spec.exp_rate) - spec.exp_rate * vb + v_b
                    grad[v_idx] += -spec.exp_rate * vb + 1.0

        if not np.isfinite(value):
            return -np.inf, np.zeros_like(theta)
        return value, grad

    return logp, layout


def log_posterior(spec: BayesSpec, design: DesignMatrix, y, theta):
    """One-shot evaluation; see make_log_posterior for repeated use."""
    fn, _ = make_log_posterior(spec, design, y)
    return fn(np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction per parameter.

    chains: (n_chains, n_draws, n_params).
    """
    c, n, p = chains.shape
    half = n // 2
    split = np.concatenate([chains[:, :half, :], chains[:, half: 2 * half, :]],
                           axis=0)
    m, nn = split.shape[0], split.shape[1]
    means = split.mean(axis=1)
    variances = split.var(axis=1, ddof=1)
    w = variances.mean(axis=0)
    b = nn * means.var(axis=0, ddof=1)
    var_plus = (nn - 1) / nn * w + b / nn
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(var_plus / w)
    return np.where(w > 0, out, 1.0)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = len(x)
    x = x - x.mean()
    size = 1
    while size < 2 * n:
        size *= 2
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """Autocorrelation-based ESS per parameter (Geyer initial positive
    sequence, chains combined)."""
    c, n, p = chains.shape
    out = np.empty(p)
    for j in range(p):
        acov = np.array([_autocovariance(chains[i, :, j]) for i in range(c)])
        chain_var = acov[:, 0] * n / (n - 1.0)
        mean_var = chain_var.mean()
        var_plus = mean_var * (n - 1.0) / n
        if c > 1:
            var_plus += chains[:, :, j].mean(axis=1).var(ddof=1)
        if var_plus <= 0:
            out[j] = c * n
            continue
        rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
        # Geyer: sum consecutive pairs while positive.
        tau = 1.0
        t = 1
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            tau += 2.0 * pair
            t += 2
        out[j] = c * n / tau
    return out


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSample:
    """Kept draws (warm-up excluded) plus sampler diagnostics."""

    spec: BayesSpec
    layout: ParamLayout
    draws: np.ndarray                # (total_kept, n_params), unconstrained
    chain_draws: np.ndarray          # (chains, kept, n_params)
    accept_rate: float
    divergence_rate: float
    step_size: float
    rhat: np.ndarray
    ess: np.ndarray
    warnings: tuple[str, ...] = ()
    seed: int = 0

    @property
    def names(self) -> tuple[str, ...]:
        return self.layout.names

    def constrained_draws(self) -> np.ndarray:
        """Scale parameters mapped back from the log scale."""
        out = self.draws.copy()
        out[:, 1 + self.layout.n_coef:] = np.exp(out[:, 1 + self.layout.n_coef:])
        return out

    def coefficient_means(self) -> dict[str, float]:
        means = self.draws.mean(axis=0)
        return dict(zip(self.layout.names, means.tolist()))


def _leapfrog(logp, theta, r, grad, eps, inv_mass, n_steps):
    theta = theta.copy()
    r = r.copy()
    r += 0.5 * eps * grad
    for step in range(n_steps):
        theta += eps * inv_mass * r
        value, grad = logp(theta)
        if step < n_steps - 1:
            r += eps * grad
    r += 0.5 * eps * grad
    return theta, r, value, grad


def sample_posterior(spec: BayesSpec, design: DesignMatrix, y, *,
                     chains: int = 4, warmup: int = 500, iterations: int = 1000,
                     seed: int = 0, target_accept: float = 0.8,
                     integration_time: float = 1.5,
                     _retry: bool = True) -> PosteriorSample:
    """HMC with dual-averaging step size and diagonal mass adaptation.

    The leapfrog path length is (integration_time / step size), jittered
    by +-20% per iteration. A divergence rate above 10% triggers one
    automatic retry at target acceptance 0.95; R-hat above 1.05 on any
    parameter attaches a warning to the result.
    """
    y = np.asarray(y, dtype=float)
    logp, layout = make_log_posterior(spec, design, y)
    d = layout.n_params

    # Static preconditioner: rough Fisher scale per coefficient so the
    # first warm-up window starts in the right ballpark for the very
    # differently scaled spline columns. Refined by adaptation below.
    base_inv_mass = np.ones(d)
    fisher = 0.05 * (design.values ** 2).sum(axis=0)
    base_inv_mass[0] = 1.0 / (1.0 + 0.05 * design.n)
    base_inv_mass[1: 1 + layout.n_coef] = 1.0 / (1.0 + fisher)

    all_chains = np.empty((chains, iterations, d))
    accept_counts = 0.0
    div_count = 0
    total_samples = 0
    final_eps = 0.0

    for chain in range(chains):
        rng = np.random.default_rng(np.random.SeedSequence((seed, chain, 7177)))
        theta = np.zeros(d)
        theta[: 1 + layout.n_coef] = rng.uniform(-0.1, 0.1, 1 + layout.n_coef)
        theta[1 + layout.n_coef:] = rng.uniform(-0.5, 0.5, layout.n_scales)
        value, grad = logp(theta)

        eps = 0.1
        mu_da = np.log(10.0 * eps)
        log_eps_bar = 0.0
        h_bar = 0.0
        gamma, t0, kappa = 0.05, 10.0, 0.75
        inv_mass = base_inv_mass.copy()

        # Expanding mass-adaptation windows between step-size-only buffers.
        init_buf = max(1, int(warmup * 0.15))
        term_buf = max(1, int(warmup * 0.10))
        window_ends = []
        start = init_buf
        win = max(10, int(warmup * 0.05))
        while start < warmup - term_buf:
            end = min(start + win, warmup - term_buf)
            if warmup - term_buf - end < 2 * win:
                end = warmup - term_buf
            window_ends.append(end)
            start = end
            win *= 2
        window_ends = set(window_ends)
        adapt_buf = []

        for it in range(warmup + iterations):
            warm = it < warmup
            r = rng.standard_normal(d) / np.sqrt(inv_mass)
            joint_old = value - 0.5 * float((r * r) @ inv_mass)
            jitter = 0.8 + 0.4 * rng.random()
            n_steps = int(np.clip(round(integration_time * jitter / eps), 1, 512))
            with np.errstate(over="ignore", invalid="ignore"):
                theta_new, r_new, value_new, grad_new = _leapfrog(
                    logp, theta, r, grad, eps, inv_mass, n_steps)
                joint_new = value_new - 0.5 * float((r_new * r_new) @ inv_mass)
                delta = joint_new - joint_old
            divergent = not np.isfinite(delta) or delta < -DIVERGENCE_ENERGY
            alpha = 0.0 if divergent else min(1.0, float(np.exp(min(delta, 0.0))))
            if not divergent and np.log(rng.random()) < delta:
                theta, value, grad = theta_new, value_new, grad_new

            if warm:
                m = it + 1
                h_bar = (1.0 - 1.0 / (m + t0)) * h_bar \
                    + (target_accept - alpha) / (m + t0)
                log_eps = mu_da - np.sqrt(m) / gamma * h_bar
                eta = m ** (-kappa)
                log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
                eps = float(np.exp(log_eps))
                if it >= init_buf:
                    adapt_buf.append(theta.copy())
                if (it + 1) in window_ends and len(adapt_buf) >= 10:
                    sample_var = np.var(np.array(adapt_buf), axis=0, ddof=1)
                    nb = len(adapt_buf)
                    # Shrink toward the static preconditioner as Stan
                    # shrinks toward unit variance.
                    inv_mass = (nb / (nb + 5.0)) * sample_var \
                        + base_inv_mass * (5.0 / (nb + 5.0)) + 1e-8
                    mu_da = np.log(10.0 * eps)
                    h_bar = 0.0
                    log_eps_bar = np.log(eps)
                    adapt_buf = []
            else:
                if it == warmup:
                    eps = float(np.exp(log_eps_bar))
                    final_eps = eps
                all_chains[chain, it - warmup] = theta
                accept_counts += alpha
                div_count += int(divergent)
                total_samples += 1

    accept_rate = accept_counts / max(total_samples, 1)
    div_rate = div_count / max(total_samples, 1)
    if div_rate > 0.10 and _retry:
        return sample_posterior(spec, design, y, chains=chains, warmup=warmup,
                                iterations=iterations, seed=seed + 1,
                                target_accept=0.95,
                                integration_time=integration_time, _retry=False)

    rhat = split_rhat(all_chains)
    ess = effective_sample_size(all_chains)
    warnings = []
    if np.any(rhat > 1.05):
        bad = [layout.names[i] for i in np.flatnonzero(rhat > 1.05)]
        warnings.append(f"R-hat > 1.05 for {bad}")
    if div_rate > 0.10:
        warnings.append(f"divergence rate {div_rate:.3f} exceeds 10% after retry")

    return PosteriorSample(
        spec=spec, layout=layout,
        draws=all_chains.reshape(-1, d).copy(), chain_draws=all_chains,
        accept_rate=float(accept_rate), divergence_rate=float(div_rate),
        step_size=float(final_eps), rhat=rhat, ess=ess,
        warnings=tuple(warnings), seed=seed)


def predict_bayes(post: PosteriorSample, X_new) -> np.ndarray:
    """Posterior predictive mean: average over draws of the per-draw
    inverse-logit linear predictor."""
    values = X_new.values if isinstance(X_new, DesignMatrix) else np.asarray(X_new)
    p = post.layout.n_coef
    if values.shape[1] != p:
        raise BayesError(f"column mismatch: layout has {p} coefficients, "
                         f"input has {values.shape[1]}")
    mu = post.draws[:, 0]
    beta = post.draws[:, 1: 1 + p]
    eta = values @ beta.T + mu[None, :]
    return (1.0 / (1.0 + np.exp(-eta))).mean(axis=1)


def draws_to_csv(post: PosteriorSample, path):
    """One row per kept draw, named columns, constrained scales."""
    draws = post.constrained_draws()
    names = ["chain", "draw"] + [n.replace("log_", "") for n in post.names]
    c, k, d = post.chain_draws.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        idx = 0
        for chain in range(c):
            for draw in range(k):
                writer.writerow([chain, draw] + [repr(v) for v in draws[idx]])
                idx += 1
