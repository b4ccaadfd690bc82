"""Motor-imagery class labels shared across the pipeline."""

from __future__ import annotations

from enum import IntEnum


class MiClass(IntEnum):
    """The four imagery classes. Integer values match the on-disk label byte."""

    N = 0  # no movement
    R = 1  # right hand
    L = 2  # left hand
    K = 3  # kick

    @classmethod
    def from_letter(cls, letter: str) -> "MiClass":
        try:
            return cls[letter.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown class letter {letter!r}, expected one of N/R/L/K") from None

    @property
    def letter(self) -> str:
        return self.name


N_CLASSES = 4
CLASS_ORDER = (MiClass.N, MiClass.R, MiClass.L, MiClass.K)
