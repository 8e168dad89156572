"""Per-criterion outcome registry, printed in the pytest terminal summary."""
import contextlib
import time

RESULTS: dict[int, tuple[bool, str, float]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    notes: list[str] = []
    start = time.perf_counter()
    ok = False
    try:
        yield notes
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        detail = "; ".join(notes)
        RESULTS[number] = (ok, f"{title}" + (f" ({detail})" if detail else ""), elapsed)
