import math
from decimal import ROUND_HALF_UP, Decimal


def round_half_up(x: float) -> int:
    """Round to the nearest integer, halves away from zero (Python's round() is half-to-even)."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def format_decimal(x: float, places: int = 3) -> str:
    """Fixed-point text with halves rounded away from zero."""
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(x))).quantize(quantum, rounding=ROUND_HALF_UP))
