"""Domain constants shared across the package."""

CLASSES = ("BULL", "NEUTRAL", "BEAR")

# Post-order share positions a user may hold (lots of 100, budget-capped at 500).
POSITIONS = (0, 100, 200, 300, 400, 500)
LOT_SIZE = 100
MAX_SHARES = 500

INITIAL_CASH = 1_000_000.0
EPISODE_DAYS = 45

# Next-day close-to-close return thresholds for the three outcome classes.
BULL_THRESHOLD = 0.02
BEAR_THRESHOLD = -0.02
