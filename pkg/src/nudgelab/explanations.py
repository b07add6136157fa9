"""Per-day explanation texts and their deterministic vector embeddings.

Texts come from a JSONL corpus or a template generator that phrases each
class's argument from chart facts. Embeddings are signed character-3-gram
feature hashes, L2-normalized: dependency-free, stable across processes,
and good enough because the decision model learns its own projection on
top. A provider protocol keeps the embedder swappable.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol

import numpy as np

from .errors import ValidationError
from .market import PriceSeries
from .seeding import rng_for

logger = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 32


@dataclass(frozen=True)
class ExplanationSet:
    """One day's explanation text per prediction class."""

    day: int
    bull: str
    neutral: str
    bear: str

    def __post_init__(self):
        for name in ("bull", "neutral", "bear"):
            text = getattr(self, name)
            if not isinstance(text, str) or not text.strip():
                raise ValidationError(f"day {self.day}: {name} explanation must be a non-empty string")

    def text_for(self, class_name: str) -> str:
        return getattr(self, class_name.lower())

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.bull, self.neutral, self.bear)


@dataclass(frozen=True)
class EmphasisPattern:
    """Which class explanations are emphasized. The selector's search space
    excludes the all-emphasized triple; the type itself does not, because
    the per-class random baseline may draw it."""

    bull: bool
    neutral: bool
    bear: bool

    def as_tuple(self) -> tuple[bool, bool, bool]:
        return (self.bull, self.neutral, self.bear)

    @property
    def count(self) -> int:
        return int(self.bull) + int(self.neutral) + int(self.bear)


FLAT_PATTERN = EmphasisPattern(False, False, False)


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature hashing of character 3-grams into ``dim`` buckets.

    Deterministic across runs and machines (keyed blake2b, not Python's
    salted hash). Vectors are L2-normalized; a text whose grams cancel to
    the zero vector maps to the first basis vector.
    """

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        if dim < 2:
            raise ValidationError(f"embedding dim must be >= 2, got {dim}")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValidationError("cannot embed an empty string")
        return _hash_embed(self.dim, text)


@lru_cache(maxsize=8192)
def _hash_embed(dim: int, text: str) -> np.ndarray:
    grams = [text[i : i + 3] for i in range(len(text) - 2)] or [text]
    vec = np.zeros(dim)
    for gram in grams:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "big")
        sign = 1.0 if (h >> 63) & 1 else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        vec = np.zeros(dim)
        vec[0] = 1.0
    else:
        vec /= norm
    vec.flags.writeable = False
    return vec


@lru_cache(maxsize=8)
def _default_embedder(dim: int) -> HashingEmbedder:
    return HashingEmbedder(dim)


def embed_text(text: str, dim: int = DEFAULT_EMBED_DIM) -> np.ndarray:
    return _default_embedder(dim).embed(text)


_BULL_UPTREND = (
    "The chart has climbed {trend:+.2f}% over the last {n} days and closed day {t} at {close:.0f} JPY; "
    "that momentum argues for a push above the recent highs.",
    "Buyers have lifted the close {trend:+.2f}% across {n} sessions into day {t} ({close:.0f} JPY), "
    "and trends of this kind tend to extend.",
)
_BULL_DOWNTREND = (
    "After sliding {trend:+.2f}% over {n} days to {close:.0f} JPY on day {t}, the chart looks oversold "
    "and due for a rebound.",
    "The {trend:+.2f}% drop into day {t} ({close:.0f} JPY) has been steep; selling of this pace often "
    "snaps back sharply.",
)
_NEUTRAL_TEXTS = (
    "Daily swings have averaged {vol:.2f}% and day {t} closed at {close:.0f} JPY, well inside the recent "
    "range; nothing on the chart forces a move either way.",
    "With volatility near {vol:.2f}% and the day-{t} close at {close:.0f} JPY holding the middle of its "
    "range, the chart points to more sideways drift.",
)
_BEAR_UPTREND = (
    "The {trend:+.2f}% run-up into day {t} ({close:.0f} JPY) looks stretched; charts this extended "
    "frequently give back gains on a reversal.",
    "Having rallied {trend:+.2f}% in {n} days to {close:.0f} JPY on day {t}, the chart is vulnerable to "
    "profit-taking and a pullback.",
)
_BEAR_DOWNTREND = (
    "The slide of {trend:+.2f}% over {n} days into day {t} ({close:.0f} JPY) shows sellers in control, "
    "and breakdowns like this usually continue.",
    "Day {t} closed at {close:.0f} JPY after a {trend:+.2f}% decline; the pattern of lower closes argues "
    "for further weakness.",
)


def generate_template_explanations(series: PriceSeries, t: int, p, seed: int,
                                   lookback: int = 10) -> ExplanationSet:
    """Three deterministic sentences, one arguing for each class, phrased from
    chart facts. The day index appears in every text, so texts are distinct
    across days; phrasing variants are chosen by a seeded draw per day."""
    if t < 0 or t >= len(series):
        raise ValidationError(f"day {t} outside series of length {len(series)}")
    span = min(lookback, t)
    closes = series.closes[t - span : t + 1]
    close = closes[-1]
    trend = float(close / closes[0] - 1.0) * 100.0 if span > 0 else 0.0
    returns = closes[1:] / closes[:-1] - 1.0 if span > 0 else np.zeros(1)
    vol = float(np.std(returns)) * 100.0
    uptrend = trend >= 0.0

    rng = rng_for(seed, "explain", t)
    pick = rng.integers(2, size=3)
    fields = {"trend": trend, "vol": vol, "close": close, "t": t, "n": max(span, 1)}
    bull = (_BULL_UPTREND if uptrend else _BULL_DOWNTREND)[pick[0]].format(**fields)
    neutral = _NEUTRAL_TEXTS[pick[1]].format(**fields)
    bear = (_BEAR_UPTREND if uptrend else _BEAR_DOWNTREND)[pick[2]].format(**fields)
    return ExplanationSet(day=t, bull=bull, neutral=neutral, bear=bear)


def generate_corpus(series: PriceSeries, days, predictor, seed: int,
                    lookback: int = 10) -> dict[int, ExplanationSet]:
    return {
        t: generate_template_explanations(series, t, predictor.p_for_day(t), seed, lookback)
        for t in days
    }


def load_corpus(path) -> dict[int, ExplanationSet]:
    """Load a JSONL corpus: one ``{"day", "bull", "neutral", "bear"}`` object per line.

    A duplicated day keeps the last entry and logs a warning.
    """
    corpus: dict[int, ExplanationSet] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            missing = {"day", "bull", "neutral", "bear"} - set(doc)
            if missing:
                day = doc.get("day", f"line {lineno}")
                raise ValidationError(f"{path}: day {day}: missing keys {sorted(missing)}")
            day = int(doc["day"])
            if day in corpus:
                logger.warning("%s: duplicate day %d at line %d; keeping the last entry", path, day, lineno)
            corpus[day] = ExplanationSet(day=day, bull=doc["bull"], neutral=doc["neutral"], bear=doc["bear"])
    return corpus


def save_corpus(corpus: dict[int, ExplanationSet], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for day in sorted(corpus):
            entry = corpus[day]
            fh.write(json.dumps(
                {"day": entry.day, "bull": entry.bull, "neutral": entry.neutral, "bear": entry.bear}
            ))
            fh.write("\n")
