"""Daily OHLC price series: ingestion, synthesis, outcome classes, window selection.

Synthetic prices are whole JPY (integer-valued floats). Stocks in the
simulated price range tick at 1 JPY, and integer closes keep portfolio
arithmetic exact in float64, which the accounting identities rely on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .constants import BEAR_THRESHOLD, BULL_THRESHOLD, CLASSES
from .errors import OutOfRangeError, ParameterError, ParseError, ValidationError, WindowNotFoundError
from .seeding import rng_for

REGIMES = ("random_walk", "momentum", "mean_revert")

CSV_HEADER = ["date_index", "open", "high", "low", "close"]


@dataclass(frozen=True)
class PriceBar:
    """One trading day of OHLC prices in JPY."""

    date_index: int
    open: float
    high: float
    low: float
    close: float

    def __post_init__(self):
        for name in ("open", "high", "low", "close"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValidationError(f"bar {self.date_index}: {name}={value!r} must be a positive finite number")
        if self.low > min(self.open, self.close):
            raise ValidationError(f"bar {self.date_index}: low {self.low} exceeds min(open, close)")
        if self.high < max(self.open, self.close):
            raise ValidationError(f"bar {self.date_index}: high {self.high} below max(open, close)")


class PriceSeries:
    """An ordered, gap-free run of daily bars."""

    def __init__(self, bars, source_id: str = "unnamed"):
        bars = tuple(bars)
        if len(bars) < 2:
            raise ValidationError("a price series needs at least 2 bars")
        for prev, cur in zip(bars, bars[1:]):
            if cur.date_index != prev.date_index + 1:
                raise ValidationError(
                    f"date_index must increase by 1: got {prev.date_index} then {cur.date_index}"
                )
        self.bars = bars
        self.source_id = source_id
        self._closes = np.array([b.close for b in bars], dtype=float)
        self._closes.flags.writeable = False

    def __len__(self) -> int:
        return len(self.bars)

    def __getitem__(self, i: int) -> PriceBar:
        return self.bars[i]

    @property
    def closes(self) -> np.ndarray:
        return self._closes

    def close(self, t: int) -> float:
        return self.bars[t].close


def load_series(path, source_id: str | None = None) -> PriceSeries:
    """Load a CSV with header ``date_index,open,high,low,close``."""
    bars = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise ParseError(f"{path}: line {lineno}: expected 5 fields, got {len(row)}")
            try:
                date_index = int(row[0])
                o, h, l, c = (float(v) for v in row[1:])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            try:
                bars.append(PriceBar(date_index, o, h, l, c))
            except ValidationError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    return PriceSeries(bars, source_id or str(path))


def save_series(series: PriceSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for bar in series.bars:
            writer.writerow([bar.date_index, bar.open, bar.high, bar.low, bar.close])


def synthesize_series(
    seed: int,
    days: int,
    regime: str = "random_walk",
    volatility: float = 0.015,
    drift: float = 0.0,
    start_price: float = 2000.0,
    momentum: float = 0.3,
    reversion: float = 0.1,
) -> PriceSeries:
    """Generate a seeded OHLC series with multiplicative daily increments.

    Regimes: ``random_walk`` draws i.i.d. log returns, ``momentum`` makes
    returns AR(1) with coefficient ``momentum``, ``mean_revert`` pulls the
    log price back toward the starting level at rate ``reversion``.
    Closes are rounded to whole JPY and floored at 1.
    """
    if days < 2:
        raise ParameterError(f"days must be >= 2, got {days}")
    if volatility < 0:
        raise ParameterError(f"volatility must be >= 0, got {volatility}")
    if regime not in REGIMES:
        raise ParameterError(f"unknown regime {regime!r}; choose from {REGIMES}")
    if start_price <= 0:
        raise ParameterError(f"start_price must be > 0, got {start_price}")

    rng = rng_for(seed, "synthesize", regime)
    z = rng.standard_normal(days)
    intraday = np.abs(rng.standard_normal((days, 2))) * volatility * 0.5
    anchor = math.log(start_price)

    bars = []
    prev_close = max(1.0, round(start_price))
    prev_ret = 0.0
    for t in range(days):
        if regime == "random_walk":
            ret = drift + volatility * z[t]
        elif regime == "momentum":
            ret = drift + momentum * (prev_ret - drift) + volatility * z[t]
        else:
            ret = drift + reversion * (anchor - math.log(prev_close)) + volatility * z[t]
        close = max(1.0, float(round(prev_close * math.exp(ret))))
        open_ = prev_close if t > 0 else close
        high = float(math.ceil(max(open_, close) * (1.0 + intraday[t, 0])))
        low = max(1.0, float(math.floor(min(open_, close) * (1.0 - intraday[t, 1]))))
        bars.append(PriceBar(t, open_, high, low, close))
        prev_ret = math.log(close / prev_close)
        prev_close = close
    return PriceSeries(bars, source_id=f"synth:{regime}:seed={seed}")


def daily_return(series: PriceSeries, t: int) -> float:
    """Close-to-close return realized from day t to day t+1."""
    if t < 0 or t + 1 >= len(series):
        raise OutOfRangeError(f"day {t}: next-day close unavailable (series length {len(series)})")
    c0, c1 = series.close(t), series.close(t + 1)
    return (c1 - c0) / c0


def true_class(series: PriceSeries, t: int) -> str:
    """Ground-truth outcome class for day t based on the next-day return.

    Boundary returns of exactly +/-2% classify as NEUTRAL.
    """
    r = daily_return(series, t)
    if r > BULL_THRESHOLD:
        return "BULL"
    if r < BEAR_THRESHOLD:
        return "BEAR"
    return "NEUTRAL"


def windowed_accuracy(series: PriceSeries, predictor, start: int, window: int) -> float:
    """Fraction of days in [start, start+window) where argmax(p) hits the true class."""
    hits = 0
    for t in range(start, start + window):
        if predictor.p_for_day(t).argmax_class() == true_class(series, t):
            hits += 1
    return hits / window


def select_window(
    series: PriceSeries,
    predictor,
    window: int = 45,
    target_accuracy: float = 0.6,
    tolerance: float = 0.03,
    min_start: int = 0,
) -> int:
    """First start index whose windowed 3-class accuracy is within tolerance of target.

    The moving average is maintained with integer hit counts, so it equals a
    brute-force recount exactly. ``predictor`` must expose ``p_for_day(t)``.
    """
    if not 0.0 <= target_accuracy <= 1.0:
        raise ParameterError(f"target_accuracy must be in [0, 1], got {target_accuracy}")
    if window > len(series) - 1:
        raise ParameterError(f"window {window} exceeds usable length {len(series) - 1}")
    if min_start < 0:
        raise ParameterError(f"min_start must be >= 0, got {min_start}")

    last_t = len(series) - 2  # last day with lookahead
    if min_start + window > last_t + 1:
        raise ParameterError(f"min_start {min_start} leaves no {window}-day window")
    hits = np.array(
        [1 if predictor.p_for_day(t).argmax_class() == true_class(series, t) else 0
         for t in range(min_start, last_t + 1)],
        dtype=int,
    )
    best_err, best_acc, best_start = math.inf, math.nan, -1
    running = int(hits[:window].sum())
    for start in range(min_start, last_t - window + 2):
        acc = running / window
        err = abs(acc - target_accuracy)
        if err <= tolerance:
            return start
        if err < best_err:
            best_err, best_acc, best_start = err, acc, start
        offset = start - min_start
        if offset + window < hits.shape[0]:
            running += int(hits[offset + window]) - int(hits[offset])
    raise WindowNotFoundError(
        f"no {window}-day window within {tolerance} of accuracy {target_accuracy}; "
        f"best was {best_acc:.4f} at start {best_start}",
        best_accuracy=best_acc,
        best_start=best_start,
    )


def class_index(name: str) -> int:
    try:
        return CLASSES.index(name)
    except ValueError:
        raise ValidationError(f"unknown class {name!r}") from None
