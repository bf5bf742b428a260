"""Multi-sensor array extension of the single-cell receiver.

Equivalent complex-baseband model for an array of identical vapor-cell
sensors sharing one free-space LO: per-sensor reception gain ``rho``, a
diagonal LO phase progression across the array, user-signal-dependent shot
noise entering through a per-sensor random diagonal, and an AWGN term that
absorbs the DC-shot, thermal, and projection noise. On top of the model sit
MRC/ZF detection, closed-form rate lower bounds, Monte-Carlo validation of
every bound term, an RF-array baseline, and the operating-point crossover
threshold against that baseline.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .frontend import BasebandGains, DetectionChain, NoiseBudget, with_powers
from .optimize import NoiseWeights, normalized_noise

__all__ = [
    "DimensionError",
    "RankDeficient",
    "NoCrossing",
    "MimoScenario",
    "ReceivedSignal",
    "DetectionResult",
    "BoundResult",
    "RateResult",
    "large_scale_fading",
    "lo_phase_progression",
    "gen_channel",
    "build_received",
    "combiner",
    "detect",
    "closed_form_moments",
    "sinr_lb_mrc",
    "sinr_lb_zf",
    "asymptotic_rate",
    "rf_gains",
    "rf_baseline",
    "crossover_threshold",
    "monte_carlo_terms",
    "monte_carlo_rate",
    "bound_violation_alarm",
]

# realizations per RNG substream; chunk c of a run with seed s draws from
# Philox keyed [s, c], so results are identical however chunks are scheduled
CHUNK = 256


class DimensionError(Exception):
    """Inversion-based detection needs more sensors than users."""


class RankDeficient(Exception):
    """Channel Gram matrix is numerically singular."""


class NoCrossing(Exception):
    """Noise-floor comparison has the same sign across the whole sweep."""


@dataclass(frozen=True, kw_only=True)
class MimoScenario:
    """Array geometry, user powers, and Monte-Carlo bookkeeping.

    ``beta`` and ``p`` accept scalars and are broadcast to one entry per
    user. ``spacing`` defaults to half the LO wavelength.
    """

    n_sensors: int
    n_users: int
    lambda_lo: float
    spacing: float | None = None
    theta_arrival: float = 0.0
    beta: np.ndarray = 1.0
    p: np.ndarray = 1.0
    seed: int = 0
    n_realizations: int = 10_000

    def __post_init__(self):
        if self.n_sensors < 1 or self.n_users < 1:
            raise ValueError("need at least one sensor and one user")
        if self.lambda_lo <= 0:
            raise ValueError("lambda_lo must be positive")
        beta = np.broadcast_to(
            np.asarray(self.beta, dtype=float), (self.n_users,)
        ).copy()
        p = np.broadcast_to(np.asarray(self.p, dtype=float), (self.n_users,)).copy()
        if np.any(beta < 0):
            raise ValueError("large-scale fading must be nonnegative")
        if np.any(p < 0):
            raise ValueError("transmit powers must be nonnegative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "p", p)
        if self.spacing is None:
            object.__setattr__(self, "spacing", 0.5 * self.lambda_lo)


@dataclass(frozen=True)
class ReceivedSignal:
    """One array snapshot with its three addends kept separate."""

    y: np.ndarray
    signal: np.ndarray
    shot: np.ndarray
    noise: np.ndarray
    symbols: np.ndarray


@dataclass(frozen=True)
class DetectionResult:
    """Per-user decision statistics and their five-way split.

    ``r == ds + ls + ui + sn + n`` exactly; the desired-signal part uses the
    ensemble-mean combining coefficient, so ``ls`` carries the realization's
    deviation from channel hardening.
    """

    r: np.ndarray
    ds: np.ndarray
    ls: np.ndarray
    ui: np.ndarray
    sn: np.ndarray
    n: np.ndarray
    method: str


@dataclass(frozen=True)
class BoundResult:
    sinr: np.ndarray
    rate: np.ndarray


@dataclass(frozen=True)
class RateResult:
    """Monte-Carlo rate with its closed-form lower bound.

    ``capped`` flags users whose sampled denominator was exactly zero
    (noiseless inversion), where the SINR and rate are reported as inf.
    """

    sinr: np.ndarray
    rate: np.ndarray
    bound: np.ndarray
    n_samples: int
    standard_error: np.ndarray
    capped: bool
    method: str


def large_scale_fading(distance_m: float, carrier_freq_hz: float) -> float:
    """Distance/frequency path loss as a linear power factor."""
    if distance_m <= 0 or carrier_freq_hz <= 0:
        raise ValueError("distance and carrier frequency must be positive")
    loss_db = (
        -32.4
        - 20.0 * math.log10(distance_m)
        - 20.0 * math.log10(carrier_freq_hz / 1e9)
    )
    return 10.0 ** (loss_db / 10.0)


def lo_phase_progression(scenario: MimoScenario) -> np.ndarray:
    """Unit-modulus per-sensor phases of the obliquely arriving LO."""
    m = np.arange(scenario.n_sensors)
    phase = (
        2.0 * math.pi * scenario.spacing / scenario.lambda_lo
        * math.sin(scenario.theta_arrival)
    )
    return np.exp(-1j * phase * m)


def gen_channel(scenario: MimoScenario, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Rayleigh columns, per-user variance beta_k per sensor."""
    shape = (scenario.n_sensors, scenario.n_users)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(scenario.beta / 2.0)


def build_received(
    h: np.ndarray,
    scenario: MimoScenario,
    gains: BasebandGains,
    budget: NoiseBudget,
    s: np.ndarray,
    rng: np.random.Generator,
) -> ReceivedSignal:
    """Assemble one array snapshot for unit-variance symbols ``s``."""
    d = lo_phase_progression(scenario)
    v = d * (h @ (np.sqrt(scenario.p) * s))
    signal = math.sqrt(gains.rho) * gains.phi * v
    b = rng.standard_normal(scenario.n_sensors) * math.sqrt(budget.sigma_sq_sn)
    shot = math.sqrt(gains.rho_sn) * gains.phi_sn * (b * v)
    wn = rng.standard_normal((2, scenario.n_sensors))
    noise = (wn[0] + 1j * wn[1]) * math.sqrt(budget.n_sum / 2.0)
    return ReceivedSignal(
        y=signal + shot + noise,
        signal=signal,
        shot=shot,
        noise=noise,
        symbols=np.asarray(s, dtype=complex),
    )


def combiner(
    h: np.ndarray, scenario: MimoScenario, gains: BasebandGains, method: str
) -> np.ndarray:
    """Per-user combining vectors as columns; MRC matches the phased
    channel, ZF inverts it."""
    d = lo_phase_progression(scenario)
    a = gains.phi * d[:, None] * h
    if method == "MRC":
        return a
    if method != "ZF":
        raise ValueError(f"unknown detection method {method!r}")
    if scenario.n_sensors <= scenario.n_users:
        raise DimensionError("zero-forcing needs more sensors than users")
    gram = a.conj().T @ a
    if np.linalg.cond(gram) > 1e12:
        raise RankDeficient("channel Gram matrix is numerically singular")
    return a @ np.linalg.inv(gram)


def detect(
    received: ReceivedSignal | np.ndarray,
    h: np.ndarray,
    scenario: MimoScenario,
    gains: BasebandGains,
    method: str,
) -> DetectionResult:
    """Apply a combiner; with a full snapshot, also split the statistic.

    A bare received vector yields only ``r`` (the component fields are
    None): the split needs the snapshot's separately stored addends.
    """
    c = combiner(h, scenario, gains, method)
    d = lo_phase_progression(scenario)
    if isinstance(received, np.ndarray):
        return DetectionResult(
            r=c.conj().T @ received,
            ds=None, ls=None, ui=None, sn=None, n=None,
            method=method,
        )

    s = received.symbols
    amp = np.sqrt(gains.rho * scenario.p)
    t = c.conj().T @ (d[:, None] * h)  # (K, K) cross-coupling after combining
    if method == "MRC":
        # hardening mean of the self-coupling entry
        t_mean = np.conj(gains.phi) * scenario.n_sensors * scenario.beta
    else:
        t_mean = np.full(scenario.n_users, 1.0 / gains.phi)
    ds = amp * gains.phi * t_mean * s
    ls = amp * gains.phi * np.diagonal(t) * s - ds
    # off-diagonal leakage only; the diagonal entry is ds + ls
    ui = gains.phi * (t @ (amp * s)) - gains.phi * np.diagonal(t) * amp * s
    sn = c.conj().T @ received.shot
    n = c.conj().T @ received.noise
    return DetectionResult(
        r=c.conj().T @ received.y, ds=ds, ls=ls, ui=ui, sn=sn, n=n, method=method
    )


def _abs_sq(x):
    return (x * x.conj()).real


def closed_form_moments(
    scenario: MimoScenario,
    gains: BasebandGains,
    budget: NoiseBudget,
    method: str,
) -> dict:
    """Ensemble second moments of the five detection terms, per user."""
    m = scenario.n_sensors
    k = scenario.n_users
    beta, p = scenario.beta, scenario.p
    rho, rho_sn = gains.rho, gains.rho_sn
    phi2 = abs(gains.phi) ** 2
    phi_sn2 = abs(gains.phi_sn) ** 2
    var = budget.sigma_sq_sn
    sigma2 = budget.n_sum
    pb = p * beta
    if method == "MRC":
        return {
            "ds": m**2 * rho * p * phi2**2 * beta**2,
            "ls": m * rho * p * phi2**2 * beta**2,
            "ui": m * rho * phi2**2 * beta * (pb.sum() - pb),
            "sn": m * var * rho_sn * phi2 * phi_sn2 * beta * (pb.sum() + pb),
            "n": m * phi2 * beta * sigma2,
        }
    if method != "ZF":
        raise ValueError(f"unknown detection method {method!r}")
    if m <= k:
        raise DimensionError("zero-forcing needs more sensors than users")
    cross = (pb.sum() / beta) * (m - 1) / (m * (m - k))
    return {
        "ds": rho * p,
        "ls": np.zeros(k),
        "ui": np.zeros(k),
        "sn": rho_sn * (phi_sn2 / phi2) * var * (p / m + cross),
        "n": np.full(k, sigma2) / ((m - k) * phi2 * beta),
    }


def sinr_lb_mrc(
    scenario: MimoScenario, gains: BasebandGains, budget: NoiseBudget
) -> BoundResult:
    """Closed-form rate lower bound for matched combining; exact assembly
    of the term moments."""
    pb = scenario.p * scenario.beta
    phi2 = abs(gains.phi) ** 2
    phi_sn2 = abs(gains.phi_sn) ** 2
    shot = budget.sigma_sq_sn * gains.rho_sn * phi_sn2
    num = scenario.n_sensors * gains.rho * phi2 * pb
    den = pb.sum() * (gains.rho * phi2 + shot) + shot * pb + budget.n_sum
    sinr = num / den
    return BoundResult(sinr=sinr, rate=np.log2(1.0 + sinr))


def sinr_lb_zf(
    scenario: MimoScenario,
    gains: BasebandGains,
    budget: NoiseBudget,
    form: str = "printed",
) -> BoundResult:
    """Closed-form rate lower bound for zero-forcing.

    ``form="printed"`` keeps the published numerator scale; the term-moment
    assembly ("moment") evaluates to exactly a quarter of it, and the
    Monte-Carlo machinery reproduces the moment assembly. Both are exposed;
    bound_violation_alarm() reports when a claimed bound exceeds the
    sampled rate.
    """
    m, k = scenario.n_sensors, scenario.n_users
    if m <= k:
        raise DimensionError("zero-forcing needs more sensors than users")
    if form not in ("printed", "moment"):
        raise ValueError(f"unknown bound form {form!r}")
    pb = scenario.p * scenario.beta
    phi2 = abs(gains.phi) ** 2
    phi_sn2 = abs(gains.phi_sn) ** 2
    shot = budget.sigma_sq_sn * gains.rho_sn * phi_sn2 / m
    num = 4.0 * (m - k) * gains.rho * phi2 * pb
    den = shot * (pb * (m - k) + pb.sum() * (m - 1)) + budget.n_sum
    with np.errstate(divide="ignore"):
        sinr = num / den
    if form == "moment":
        sinr = sinr / 4.0
    return BoundResult(sinr=sinr, rate=np.log2(1.0 + sinr))


def asymptotic_rate(
    gains: BasebandGains,
    budget: NoiseBudget,
    beta_k: float,
    energy: float = 1.0,
) -> float:
    """Rate retained when per-user power is scaled down as 1/(sensor count).

    Only the user-signal-independent noise floor survives the limit; the
    floor equals four times the AWGN variance over the reception gain.
    """
    floor = 4.0 * budget.n_sum / (gains.rho * abs(gains.phi) ** 2)
    if floor <= 0:
        raise ValueError("noise floor must be positive")
    return math.log2(1.0 + 4.0 * energy * beta_k / floor)


def rf_gains(sigma_rf_sq: float) -> tuple[BasebandGains, NoiseBudget]:
    """Unit-gain transparent front end with a thermal-style AWGN floor: the
    conventional-array baseline expressed in the same interfaces."""
    gains = BasebandGains(
        rho=1.0, rho_sn=0.0, phi=1.0 + 0.0j, phi_sn=1.0 + 0.0j,
        kappa=0.0, p_g=0.0, p_sn_bar_sq=0.0, p_cn_bar=0.0, varphi=0.0,
    )
    budget = NoiseBudget(
        n_cn=0.0, n_tn=2.0 * sigma_rf_sq, n_qpn=0.0,
        n_sum=sigma_rf_sq, sigma_sq_sn=0.0, sn_coeff=0.0,
    )
    return gains, budget


def rf_baseline(scenario: MimoScenario, sigma_rf_sq: float) -> dict:
    """Per-user bounds of the conventional array at the same geometry.

    The ZF entry uses the moment assembly (the standard inverse-Wishart
    result); the printed-scale variant exists only on the atomic side.
    """
    gains, budget = rf_gains(sigma_rf_sq)
    return {
        "mrc": sinr_lb_mrc(scenario, gains, budget),
        "zf": sinr_lb_zf(scenario, gains, budget, form="moment"),
    }


def crossover_threshold(
    op,
    chain: DetectionChain,
    system,
    sigma_rf_sq: float,
    sweep: str = "p_lo",
    bounds: tuple[float, float] | None = None,
) -> float:
    """Beam power where the user-signal-independent noise floor meets four
    times the baseline AWGN variance.

    The floor is U-shaped in both beam powers, so a sweep can cross twice;
    the returned root is the upward crossing (floor rising through the
    baseline: the degradation edge) when one exists, else the first
    crossing found. Bisection refines to 0.1% relative.
    """
    if sweep not in ("p_lo", "p0"):
        raise ValueError("sweep must be 'p_lo' or 'p0'")
    if bounds is None:
        bounds = (1e-9, 1e-3) if sweep == "p_lo" else (1e-4, 1e-1)
    wts = NoiseWeights.from_chain(chain, system)
    floor_wts = NoiseWeights(0.0, wts.dc_shot, wts.thermal, wts.projection)

    def excess(x):
        value = normalized_noise(
            with_powers(op, **{sweep: x}), floor_wts, system
        )
        return value - 4.0 * sigma_rf_sq

    grid = np.geomspace(bounds[0], bounds[1], 128)
    signs = np.array([math.copysign(1.0, excess(x)) if excess(x) != 0.0 else 0.0
                      for x in grid])
    flips = np.flatnonzero(signs[:-1] * signs[1:] < 0)
    if flips.size == 0:
        raise NoCrossing("noise-floor excess has one sign across the sweep range")
    upward = [i for i in flips if signs[i] < 0 < signs[i + 1]]
    i = upward[-1] if upward else flips[0]
    a, b = grid[i], grid[i + 1]
    fa = excess(a)
    while (b - a) > 1e-3 * 0.5 * (a + b):
        mid = math.sqrt(a * b)
        fm = excess(mid)
        if fa * fm <= 0.0:
            b = mid
        else:
            a, fa = mid, fm
    return 0.5 * (a + b)


# --------------------------------------------------------------------------
# Monte-Carlo engine


def _chunk_stats(scenario, gains, budget, method, chunk_index, n):
    """Term accumulators over one substream: fixed draw order (channel,
    symbols, shot diagonal, AWGN), so the stream splits are reproducible."""
    rng = np.random.Generator(np.random.Philox(key=[scenario.seed, chunk_index]))
    m, k = scenario.n_sensors, scenario.n_users
    h_re = rng.standard_normal((n, m, k))
    h_im = rng.standard_normal((n, m, k))
    h = (h_re + 1j * h_im) * np.sqrt(scenario.beta / 2.0)
    s_re = rng.standard_normal((n, k))
    s_im = rng.standard_normal((n, k))
    s = (s_re + 1j * s_im) / math.sqrt(2.0)
    b = rng.standard_normal((n, m)) * math.sqrt(budget.sigma_sq_sn)
    w_re = rng.standard_normal((n, m))
    w_im = rng.standard_normal((n, m))
    w = (w_re + 1j * w_im) * math.sqrt(budget.n_sum / 2.0)

    d = lo_phase_progression(scenario)
    a = d[None, :, None] * h
    gram = np.einsum("nmk,nml->nkl", a.conj(), a)
    ps = np.sqrt(scenario.p) * s
    v = np.einsum("nmk,nk->nm", a, ps)

    if method == "MRC":
        t = np.conj(gains.phi) * gram

        def comb(z):
            return np.conj(gains.phi) * np.einsum("nmk,nm->nk", a.conj(), z)
    elif method == "ZF":
        try:
            g_inv = np.linalg.inv(gram)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient(str(exc)) from None
        t = np.broadcast_to(np.eye(k) / gains.phi, (n, k, k))
        scale = np.conj(gains.phi) / abs(gains.phi) ** 2

        def comb(z):
            q = np.einsum("nmk,nm->nk", a.conj(), z)
            return scale * np.einsum("nkl,nl->nk", g_inv, q)
    else:
        raise ValueError(f"unknown detection method {method!r}")

    t_diag = np.diagonal(t, axis1=1, axis2=2)
    amp = gains.phi * np.einsum("nkl,nl->nk", t, ps)
    ui = math.sqrt(gains.rho) * (amp - gains.phi * t_diag * ps)
    sn = math.sqrt(gains.rho_sn) * gains.phi_sn * comb(b * v)
    wn = comb(w)

    return np.concatenate([
        t_diag.sum(axis=0),                     # complex mean accumulator
        _abs_sq(t_diag).sum(axis=0),
        _abs_sq(ui).sum(axis=0),
        _abs_sq(sn).sum(axis=0),
        _abs_sq(wn).sum(axis=0),
    ]).reshape(5, k), n


def _run_chunks(scenario, gains, budget, method, threads):
    if scenario.n_realizations < 100:
        raise ValueError("need at least 100 realizations")
    sizes = []
    remaining = scenario.n_realizations
    while remaining > 0:
        sizes.append(min(CHUNK, remaining))
        remaining -= CHUNK

    def work(i):
        return _chunk_stats(scenario, gains, budget, method, i, sizes[i])

    if threads is None or threads <= 1:
        results = [work(i) for i in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(sizes))))
    return results


def _terms_from_sums(scenario, gains, sums, count):
    """Five term moments from the accumulator block."""
    m1 = sums[0] / count
    rho_p_phi2 = gains.rho * scenario.p * abs(gains.phi) ** 2
    ds = rho_p_phi2 * _abs_sq(m1)
    ls = rho_p_phi2 * np.maximum(sums[1].real / count - _abs_sq(m1), 0.0)
    return {
        "ds": ds,
        "ls": ls,
        "ui": sums[2].real / count,
        "sn": sums[3].real / count,
        "n": sums[4].real / count,
    }


def monte_carlo_terms(
    scenario: MimoScenario,
    gains: BasebandGains,
    budget: NoiseBudget,
    method: str,
    threads: int | None = None,
) -> dict:
    """Sample-averaged second moments of the five detection terms."""
    results = _run_chunks(scenario, gains, budget, method, threads)
    total = np.sum(np.stack([r[0] for r in results]), axis=0)
    count = sum(r[1] for r in results)
    return _terms_from_sums(scenario, gains, total, count)


def _rate_from_terms(terms):
    den = terms["ls"] + terms["ui"] + terms["sn"] + terms["n"]
    with np.errstate(divide="ignore"):
        sinr = np.where(den > 0.0, terms["ds"] / np.where(den > 0, den, 1.0),
                        np.inf)
    return sinr, np.log2(1.0 + sinr), bool(np.any(den == 0.0))


def monte_carlo_rate(
    scenario: MimoScenario,
    gains: BasebandGains,
    budget: NoiseBudget,
    method: str,
    threads: int | None = None,
) -> RateResult:
    """Rate from sample-averaged term moments, with a batch-means standard
    error and the matching closed-form lower bound."""
    results = _run_chunks(scenario, gains, budget, method, threads)
    total = np.sum(np.stack([r[0] for r in results]), axis=0)
    count = sum(r[1] for r in results)
    sinr, rate, capped = _rate_from_terms(
        _terms_from_sums(scenario, gains, total, count)
    )

    if len(results) >= 2 and not capped:
        batch = np.stack([
            _rate_from_terms(_terms_from_sums(scenario, gains, r[0], r[1]))[1]
            for r in results
        ])
        se = batch.std(axis=0, ddof=1) / math.sqrt(len(results))
    else:
        se = np.zeros(scenario.n_users)

    if method == "MRC":
        bound = sinr_lb_mrc(scenario, gains, budget)
    else:
        bound = sinr_lb_zf(scenario, gains, budget, form="moment")
    return RateResult(
        sinr=sinr,
        rate=rate,
        bound=bound.rate,
        n_samples=count,
        standard_error=se,
        capped=capped,
        method=method,
    )


def bound_violation_alarm(result: RateResult, bound_rate=None) -> bool:
    """True when a claimed lower bound sits above the sampled rate by more
    than three standard errors for any user."""
    bound = result.bound if bound_rate is None else np.asarray(bound_rate)
    return bool(np.any(result.rate + 3.0 * result.standard_error < bound))
