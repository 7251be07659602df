"""Dual-threshold (hysteresis) filter over per-frame gesture classes.

A gesture becomes active once it fills ``on_threshold`` slots of the last
``buffer_len`` predictions and stays active while it keeps at least
``off_threshold`` of them. Class 0 is "no gesture" and never activates.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

N_CLASSES = 19


@dataclass(frozen=True)
class FilterParams:
    buffer_len: int = 10
    on_threshold: int = 6
    off_threshold: int = 3
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if not 0 < self.off_threshold < self.on_threshold <= self.buffer_len:
            raise ValueError("need 0 < off_threshold < on_threshold <= buffer_len")


@dataclass(frozen=True)
class FilterState:
    buffer: tuple = ()
    active: int | None = None


def push_prediction(state: FilterState, class_id: int, params: FilterParams = FilterParams()):
    """Returns ``(new_state, active)`` where ``active`` is a class id or None.

    Deactivation is evaluated before activation, so a direct switch g -> h
    happens in one frame only when g has fallen below the off threshold and
    h has reached the on threshold.
    """
    class_id = int(class_id)
    if not 0 <= class_id < params.n_classes:
        raise ValueError(f"class id {class_id} outside [0, {params.n_classes})")
    buf = (state.buffer + (class_id,))[-params.buffer_len:]
    counts = Counter(buf)
    active = state.active
    if active is not None and counts[active] < params.off_threshold:
        active = None
    if active is None:
        best, best_n, best_last = None, 0, -1
        for g, n in counts.items():
            if g == 0 or n < params.on_threshold:
                continue
            last = len(buf) - 1 - buf[::-1].index(g)
            if n > best_n or (n == best_n and last > best_last):
                best, best_n, best_last = g, n, last
        active = best
    new = FilterState(buf, active)
    return new, active


class HysteresisFilter:
    """Stateful convenience wrapper around :func:`push_prediction`."""

    def __init__(self, params: FilterParams = FilterParams()):
        self.params = params
        self.state = FilterState()

    def push(self, class_id: int) -> int | None:
        self.state, active = push_prediction(self.state, class_id, self.params)
        return active

    def reset(self) -> None:
        self.state = FilterState()

    @property
    def active(self) -> int | None:
        return self.state.active


def filter_stream(stream, params: FilterParams = FilterParams()) -> list:
    f = HysteresisFilter(params)
    return [f.push(c) for c in stream]


def write_trace_csv(path, raw, active) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "raw_class", "active_class"])
        for i, (r, a) in enumerate(zip(raw, active)):
            w.writerow([i, r, 0 if a is None else a])
