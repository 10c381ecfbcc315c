"""American put pricing on a binomial tree, with supporting machinery.

The ground-truth pricer is a Cox-Ross-Rubinstein tree with backward
induction: up factor exp(vol * sqrt(dt)), down factor its reciprocal, and
risk-neutral up-probability (exp((r - q) dt) - d) / (u - d). Maturities are
quoted in months and divided by 12 into years. Strikes are quoted as a
fraction of the initial stock price, which defaults to 100 USD so that one
U.S. cent is 0.01 in price units.

A closed-form European put serves as an independent validator (with zero
interest early exercise of an American put is never strictly optimal, so
the two prices agree up to discretization error).

The backward induction keeps one tree level in memory and is vectorized
across contracts; each contract occupies one row of the working arrays, so
prices are bit-identical regardless of how contracts are batched or farmed
across worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import generator

SPOT_REFERENCE = 100.0  # USD; makes one U.S. cent = 0.01 price units
DEFAULT_TREE_STEPS = 1000

_FIELDS = ("strike_pct", "maturity_months", "rate", "dividend_yield", "volatility")


@dataclass(frozen=True)
class OptionContract:
    """Contract terms (K, T, r, q, vol) of an American put.

    ``strike_pct`` is the strike as a fraction of the initial stock price
    and ``maturity_months`` the time to maturity in months.
    """

    strike_pct: float
    maturity_months: float
    rate: float
    dividend_yield: float
    volatility: float

    def __post_init__(self) -> None:
        for name in _FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.strike_pct <= 0.0:
            raise ValueError(f"strike_pct must be positive, got {self.strike_pct}")
        if self.maturity_months <= 0.0:
            raise ValueError(
                f"maturity_months must be positive, got {self.maturity_months}"
            )
        if self.volatility <= 0.0:
            raise ValueError(f"volatility must be positive, got {self.volatility}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.strike_pct,
                self.maturity_months,
                self.rate,
                self.dividend_yield,
                self.volatility,
            ]
        )


@dataclass(frozen=True)
class DomainBox:
    """Componentwise bounds on (K, T, r, q, vol)."""

    lower: tuple[float, float, float, float, float]
    upper: tuple[float, float, float, float, float]

    def __post_init__(self) -> None:
        if len(self.lower) != 5 or len(self.upper) != 5:
            raise ValueError("a domain box needs 5 lower and 5 upper bounds")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise ValueError(f"need lower < upper, got [{lo}, {hi}]")

    def contains(self, contract: OptionContract) -> bool:
        x = contract.as_array()
        return bool(
            np.all(x >= np.asarray(self.lower)) and np.all(x <= np.asarray(self.upper))
        )


# Training and test hyper-rectangles of the pricing experiment. The test
# box sits strictly inside the training box in K and vol because surrogate
# accuracy degrades near the training boundary.
C_TRAIN = DomainBox(
    lower=(0.40, 11.0, 0.015, 0.00, 0.05),
    upper=(1.60, 12.0, 0.025, 0.05, 0.55),
)
C_TEST = DomainBox(
    lower=(0.50, 11.0, 0.015, 0.00, 0.10),
    upper=(1.50, 12.0, 0.025, 0.05, 0.50),
)


def contracts_matrix(contracts: Sequence[OptionContract]) -> np.ndarray:
    """Stack contracts into an (n, 5) array with columns K, T, r, q, vol."""
    out = np.empty((len(contracts), 5))
    for i, c in enumerate(contracts):
        out[i, 0] = c.strike_pct
        out[i, 1] = c.maturity_months
        out[i, 2] = c.rate
        out[i, 3] = c.dividend_yield
        out[i, 4] = c.volatility
    return out


def _crr_put_batch(params: np.ndarray, spot: float, steps: int) -> np.ndarray:
    """Backward induction over one shared step count, one contract per row."""
    strike = params[:, 0] * spot
    dt = (params[:, 1] / 12.0) / steps
    r, q, vol = params[:, 2], params[:, 3], params[:, 4]

    up = np.exp(vol * np.sqrt(dt))
    down = 1.0 / up
    growth = np.exp((r - q) * dt)
    prob_up = (growth - down) / (up - down)
    if np.any(prob_up < 0.0) or np.any(prob_up > 1.0):
        bad = int(np.argmax((prob_up < 0.0) | (prob_up > 1.0)))
        raise ValueError(
            "risk-neutral up-probability outside [0, 1] for contract "
            f"{params[bad].tolist()} at {steps} steps; the discretization "
            "admits arbitrage for these parameters"
        )
    discount = np.exp(-r * dt)
    pu = (discount * prob_up)[:, None]
    pd = (discount * (1.0 - prob_up))[:, None]
    strike_col = strike[:, None]

    # Stock prices at level i, node j are spot * up^(2j - i). One power
    # table per batch keeps every node exact (no drift from repeated
    # multiplication); level i reads the strided slice below.
    powers = spot * up[:, None] ** np.arange(-steps, steps + 1)[None, :]
    value = np.maximum(strike_col - powers[:, ::2], 0.0)
    for level in range(steps - 1, -1, -1):
        value = pu * value[:, 1 : level + 2] + pd * value[:, : level + 1]
        stock = powers[:, steps - level : steps + level + 1 : 2]
        np.maximum(value, strike_col - stock, out=value)
    return value[:, 0]


def crr_american_put(
    contract: OptionContract,
    spot: float = SPOT_REFERENCE,
    steps: int = DEFAULT_TREE_STEPS,
) -> float:
    """Price an American put by backward induction on a binomial tree.

    The result is bounded below by the immediate exercise value and above
    by the dollar strike.
    """
    if spot <= 0.0:
        raise ValueError(f"spot must be positive, got {spot}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    return float(_crr_put_batch(contract.as_array()[None, :], spot, steps)[0])


def price_contracts(
    contracts: Sequence[OptionContract],
    spot: float = SPOT_REFERENCE,
    steps: int = DEFAULT_TREE_STEPS,
    workers: int | None = None,
    batch_size: int = 2048,
) -> np.ndarray:
    """Price many contracts; results follow input order.

    Pricing is pure, so the work may be farmed across processes; neither
    ``workers`` nor ``batch_size`` affects the returned bits.
    """
    if spot <= 0.0:
        raise ValueError(f"spot must be positive, got {spot}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    params = contracts_matrix(contracts)
    chunks = [params[i : i + batch_size] for i in range(0, len(params), batch_size)]
    if workers is None or workers <= 1 or len(chunks) <= 1:
        parts = [_crr_put_batch(chunk, spot, steps) for chunk in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(_crr_put_batch, chunks, [spot] * len(chunks), [steps] * len(chunks))
            )
    return np.concatenate(parts) if parts else np.empty(0)


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def bs_european_put(contract: OptionContract, spot: float = SPOT_REFERENCE) -> float:
    """Closed-form European put with continuous dividend yield.

    Used as a test oracle and as a lower bound for the American price.
    """
    if spot <= 0.0:
        raise ValueError(f"spot must be positive, got {spot}")
    strike = contract.strike_pct * spot
    t = contract.maturity_months / 12.0
    r, q, vol = contract.rate, contract.dividend_yield, contract.volatility
    sig_sqrt_t = vol * math.sqrt(t)
    d1 = (math.log(spot / strike) + (r - q + 0.5 * vol * vol) * t) / sig_sqrt_t
    d2 = d1 - sig_sqrt_t
    return strike * math.exp(-r * t) * _norm_cdf(-d2) - spot * math.exp(
        -q * t
    ) * _norm_cdf(-d1)


def sample_uniform(box: DomainBox, count: int, seed: int) -> list[OptionContract]:
    """``count`` uniform draws over the box, deterministic given the seed."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    lower = np.asarray(box.lower)
    upper = np.asarray(box.upper)
    u = generator(seed).random((count, 5))
    points = lower + (upper - lower) * u
    return [
        OptionContract(
            strike_pct=row[0],
            maturity_months=row[1],
            rate=row[2],
            dividend_yield=row[3],
            volatility=row[4],
        )
        for row in points.tolist()
    ]


PRICED_CSV_HEADER = "K,T,r,q,sigma,price"


def write_priced_csv(
    path,
    contracts: Sequence[OptionContract],
    prices: np.ndarray,
    comments: dict | None = None,
) -> None:
    """Write contracts and prices as CSV with header ``K,T,r,q,sigma,price``."""
    if len(contracts) != len(prices):
        raise ValueError("contracts and prices must have equal length")
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (comments or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write(PRICED_CSV_HEADER + "\n")
        for c, p in zip(contracts, prices):
            fh.write(
                f"{c.strike_pct!r},{c.maturity_months!r},{c.rate!r},"
                f"{c.dividend_yield!r},{c.volatility!r},{float(p)!r}\n"
            )


def read_priced_csv(path) -> tuple[list[OptionContract], np.ndarray]:
    """Read a ``K,T,r,q,sigma,price`` CSV back into contracts and prices."""
    contracts: list[OptionContract] = []
    prices: list[float] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                if line != PRICED_CSV_HEADER:
                    raise ValueError(
                        f"{path}: line {lineno}: expected header "
                        f"{PRICED_CSV_HEADER!r}, got {line!r}"
                    )
                header = line
                continue
            fields = line.split(",")
            if len(fields) != 6:
                raise ValueError(
                    f"{path}: line {lineno}: expected 6 comma-separated values, "
                    f"got {len(fields)}"
                )
            try:
                values = [float(f) for f in fields]
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: non-numeric field in {line!r}"
                ) from None
            try:
                contracts.append(
                    OptionContract(
                        strike_pct=values[0],
                        maturity_months=values[1],
                        rate=values[2],
                        dividend_yield=values[3],
                        volatility=values[4],
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            prices.append(values[5])
    if header is None:
        raise ValueError(f"{path}: missing {PRICED_CSV_HEADER!r} header")
    if not contracts:
        raise ValueError(f"{path}: no contract rows")
    return contracts, np.asarray(prices)
